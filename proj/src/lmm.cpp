#include "prolific/lmm.hpp"

#include <algorithm>
#include <cmath>

#include "prolific/errors.hpp"
#include "prolific/nelder_mead.hpp"

namespace prolific {

ProjectedLayer make_layer(const CurveTable& table, const Eigen::MatrixXd& scores, int k) {
  if (scores.rows() != table.rows() || k < 0 || k >= scores.cols())
    throw ValidationError("score matrix does not match the curve table");
  ProjectedLayer layer;
  layer.score = scores.col(k);
  layer.day = table.day;
  layer.period = table.period;
  layer.i_tau = table.i_tau;
  layer.i_lambda = table.i_lambda;
  layer.covariates = table.covariates;
  layer.subject_blocks = table.subject_blocks;
  return layer;
}

ProjectedLmmProblem build_design(const ProjectedLayer& layer, const DesignConfig& config,
                                 const std::vector<double>& knots) {
  const int N = static_cast<int>(layer.score.size());
  if (N == 0) throw ValidationError("empty projected layer");
  bool any_tau = false, any_lambda = false;
  for (int i = 0; i < N; ++i) {
    any_tau |= layer.i_tau[i] != 0;
    any_lambda |= layer.i_lambda[i] != 0;
  }
  if (!any_tau) throw ValidationError("no treated curves: the treatment block is empty");
  if (!any_lambda) throw ValidationError("no washout curves: the carryover block is empty");

  ProjectedLmmProblem p;
  p.h_mu = config.h_mu;
  p.h_tau = config.h_tau;
  p.h_lambda = config.h_lambda;
  p.L = static_cast<int>(layer.covariates.cols());
  p.knots = knots;
  p.y = layer.score;
  p.subject_blocks = layer.subject_blocks;
  p.period = layer.period;
  p.day = layer.day;
  const int Q = static_cast<int>(knots.size());
  p.X_b.resize(N, p.h_mu + 1 + p.L);
  p.X_tau.resize(N, p.h_tau + 1);
  p.X_lambda.resize(N, p.h_lambda + 1);
  p.Z_mu.resize(N, Q);
  p.Z_tau.resize(N, Q);
  p.Z_lambda.resize(N, Q);
  TruncatedPolyBasis bm{p.h_mu, knots}, bt{p.h_tau, knots}, bl{p.h_lambda, knots};
  for (int i = 0; i < N; ++i) {
    BasisRow m = build_basis_row(layer.day[i], bm, 1);
    p.X_b.row(i).head(p.h_mu + 1) = m.fixed_part.transpose();
    if (p.L > 0) p.X_b.row(i).tail(p.L) = layer.covariates.row(i);
    p.Z_mu.row(i) = m.random_part.transpose();
    BasisRow t = build_basis_row(layer.day[i], bt, layer.i_tau[i]);
    p.X_tau.row(i) = t.fixed_part.transpose();
    p.Z_tau.row(i) = t.random_part.transpose();
    BasisRow l = build_basis_row(layer.day[i], bl, layer.i_lambda[i]);
    p.X_lambda.row(i) = l.fixed_part.transpose();
    p.Z_lambda.row(i) = l.random_part.transpose();
  }
  return p;
}

ProjectedLmmProblem build_design(const ProjectedLayer& layer, const DesignConfig& config) {
  return build_design(layer, config, choose_knots(layer.day, config.knot_rule));
}

namespace {

Eigen::MatrixXd full_fixed(const ProjectedLmmProblem& p) {
  Eigen::MatrixXd X(p.N(), p.X_b.cols() + p.X_tau.cols() + p.X_lambda.cols());
  X << p.X_b, p.X_tau, p.X_lambda;
  return X;
}

}  // namespace

Eigen::VectorXd working_residuals(const ProjectedLmmProblem& problem) {
  Eigen::MatrixXd X = full_fixed(problem);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < X.cols()) throw NumericalError("fixed-effects design is rank deficient");
  return problem.y - X * qr.solve(problem.y);
}

Eigen::MatrixXd inverse_sqrt_spd(const Eigen::MatrixXd& S) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (S + S.transpose()));
  if (es.info() != Eigen::Success) throw NumericalError("block eigendecomposition failed");
  if (S.rows() > 0 && !(es.eigenvalues()(0) > 0.0)) throw NumericalError("within-subject block is not positive definite");
  return es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

WithinSubjectCovariance covariance_from_blocks(std::vector<Eigen::MatrixXd> blocks) {
  WithinSubjectCovariance cov;
  cov.blocks = std::move(blocks);
  cov.inv_sqrt.reserve(cov.blocks.size());
  for (const auto& b : cov.blocks) cov.inv_sqrt.push_back(inverse_sqrt_spd(b));
  return cov;
}

namespace {

// Local-linear surface smoother of within-subject residual cross-products,
// evaluated on an equally spaced grid over [0,1]^2.
Eigen::MatrixXd smooth_cross_products(const ProjectedLmmProblem& p, const Eigen::VectorXd& e,
                                      const std::vector<double>& days, int G, double bw) {
  struct Pair {
    double x, y, z;
  };
  std::vector<Pair> pairs;
  for (auto [start, len] : p.subject_blocks)
    for (int a = 0; a < len; ++a)
      for (int b = 0; b < len; ++b)
        if (a != b) pairs.push_back({days[start + a], days[start + b], e(start + a) * e(start + b)});
  Eigen::MatrixXd out(G, G);
#pragma omp parallel for schedule(dynamic)
  for (int u = 0; u < G; ++u) {
    for (int v = u; v < G; ++v) {
      const double gu = static_cast<double>(u) / (G - 1), gv = static_cast<double>(v) / (G - 1);
      Eigen::Matrix3d A = Eigen::Matrix3d::Zero();
      Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
      for (const auto& pr : pairs) {
        double dx = pr.x - gu, dy = pr.y - gv;
        if (std::abs(dx) >= bw || std::abs(dy) >= bw) continue;
        double w = (1.0 - dx * dx / (bw * bw)) * (1.0 - dy * dy / (bw * bw));
        Eigen::Vector3d f(1.0, dx, dy);
        A.noalias() += w * f * f.transpose();
        rhs.noalias() += w * pr.z * f;
      }
      Eigen::LDLT<Eigen::Matrix3d> ldlt(A);
      double val = (ldlt.info() == Eigen::Success && A(0, 0) > 0) ? ldlt.solve(rhs)(0) : 0.0;
      if (!std::isfinite(val)) val = 0.0;
      out(u, v) = val;
      out(v, u) = val;
    }
  }
  return out;
}

double bilinear(const Eigen::MatrixXd& g, double x, double y) {
  const int G = static_cast<int>(g.rows());
  auto locate = [&](double t, int& i, double& w) {
    double pos = std::clamp(t, 0.0, 1.0) * (G - 1);
    i = std::min(static_cast<int>(std::floor(pos)), G - 2);
    w = pos - i;
  };
  int i, j;
  double wx, wy;
  locate(x, i, wx);
  locate(y, j, wy);
  return (1 - wx) * (1 - wy) * g(i, j) + wx * (1 - wy) * g(i + 1, j) + (1 - wx) * wy * g(i, j + 1) +
         wx * wy * g(i + 1, j + 1);
}

}  // namespace

WithinSubjectCovariance estimate_within_covariance(const ProjectedLmmProblem& problem, CovarianceMethod method) {
  const Eigen::VectorXd e = working_residuals(problem);
  const double total = e.squaredNorm() / e.size();
  WithinSubjectCovariance cov;
  cov.method = method;
  if (!(total > 0.0)) throw NumericalError("working residuals are identically zero");

  if (method == CovarianceMethod::CompoundSymmetry) {
    double cross = 0.0, pairs = 0.0;
    for (auto [start, len] : problem.subject_blocks) {
      double s = e.segment(start, len).sum();
      cross += s * s - e.segment(start, len).squaredNorm();
      pairs += static_cast<double>(len) * (len - 1);
    }
    cov.v_between = pairs > 0 ? std::max(cross / pairs, 0.0) : 0.0;
    cov.v_error = total - cov.v_between;
    if (cov.v_error < 0.05 * total) {
      cov.v_error = 0.05 * total;
      cov.nugget_floored = true;
    }
    for (auto [start, len] : problem.subject_blocks) {
      Eigen::MatrixXd b = Eigen::MatrixXd::Constant(len, len, cov.v_between);
      b.diagonal().array() += cov.v_error;
      cov.blocks.push_back(std::move(b));
    }
  } else {
    const std::vector<double>& days = problem.day;
    const int G = 26;
    Eigen::MatrixXd surface = smooth_cross_products(problem, e, days, G, 0.2);
    const double w = 1.0 / (G - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(surface * w);
    Eigen::VectorXd vals = es.eigenvalues().reverse();
    Eigen::MatrixXd vecs = es.eigenvectors().rowwise().reverse();
    double pos_total = 0.0;
    for (int i = 0; i < G; ++i) pos_total += std::max(vals(i), 0.0);
    Eigen::MatrixXd kept = Eigen::MatrixXd::Zero(G, G);
    double cum = 0.0;
    for (int i = 0; i < G && vals(i) > 0.0; ++i) {
      kept += vals(i) / w * vecs.col(i) * vecs.col(i).transpose();
      cum += vals(i);
      if (cum >= 0.9 * pos_total) break;
    }
    double diag_mean = 0.0;
    for (int i = 0; i < problem.N(); ++i) diag_mean += bilinear(kept, days[i], days[i]);
    diag_mean /= problem.N();
    cov.v_between = diag_mean;
    cov.v_error = total - diag_mean;
    if (cov.v_error < 0.05 * total) {
      cov.v_error = 0.05 * total;
      cov.nugget_floored = true;
    }
    for (auto [start, len] : problem.subject_blocks) {
      Eigen::MatrixXd b(len, len);
      for (int a = 0; a < len; ++a)
        for (int c = 0; c < len; ++c) b(a, c) = bilinear(kept, days[start + a], days[start + c]);
      b = 0.5 * (b + b.transpose());
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> bs(b);
      Eigen::VectorXd ev = bs.eigenvalues().cwiseMax(0.0);
      b = bs.eigenvectors() * ev.asDiagonal() * bs.eigenvectors().transpose();
      b.diagonal().array() += cov.v_error;
      cov.blocks.push_back(std::move(b));
    }
  }
  for (const auto& b : cov.blocks) cov.inv_sqrt.push_back(inverse_sqrt_spd(b));
  return cov;
}

ProjectedLmmProblem whiten(const ProjectedLmmProblem& problem, const WithinSubjectCovariance& cov) {
  if (cov.inv_sqrt.size() != problem.subject_blocks.size())
    throw ValidationError("covariance blocks do not match the subjects");
  ProjectedLmmProblem out = problem;
  for (std::size_t i = 0; i < problem.subject_blocks.size(); ++i) {
    auto [start, len] = problem.subject_blocks[i];
    const Eigen::MatrixXd& W = cov.inv_sqrt[i];
    if (W.rows() != len) throw ValidationError("covariance block size does not match the subject");
    if (len == 0) continue;
    out.y.segment(start, len) = W * problem.y.segment(start, len);
    for (auto [dst, src] : {std::pair{&out.X_b, &problem.X_b}, std::pair{&out.X_tau, &problem.X_tau},
                            std::pair{&out.X_lambda, &problem.X_lambda}, std::pair{&out.Z_mu, &problem.Z_mu},
                            std::pair{&out.Z_tau, &problem.Z_tau}, std::pair{&out.Z_lambda, &problem.Z_lambda}})
      dst->middleRows(start, len) = W * src->middleRows(start, len);
  }
  return out;
}

CrossProducts::CrossProducts(const ProjectedLmmProblem& p) {
  N_ = p.N();
  L_ = p.L;
  int col = 0;
  for (int c = 0; c < 3; ++c) {
    x_start_[c] = col;
    x_size_[c] = static_cast<int>(p.X(c).cols());
    col += x_size_[c];
  }
  for (int c = 0; c < 3; ++c) {
    z_start_[c] = col;
    z_size_[c] = static_cast<int>(p.Z(c).cols());
    col += z_size_[c];
  }
  y_ = col++;
  Eigen::MatrixXd A(N_, col);
  A << p.X_b, p.X_tau, p.X_lambda, p.Z_mu, p.Z_tau, p.Z_lambda, p.y;
  G_ = Eigen::MatrixXd::Zero(col, col);
  G_.selfadjointView<Eigen::Lower>().rankUpdate(A.transpose());
  G_ = G_.selfadjointView<Eigen::Lower>();
}

std::vector<int> CrossProducts::x_columns(FixedSet set) const {
  std::vector<int> cols;
  for (int c = 0; c < 3; ++c) {
    if (c == kTau && !set.tau) continue;
    if (c == kLambda && !set.lambda) continue;
    for (int j = 0; j < x_size_[c]; ++j) cols.push_back(x_start_[c] + j);
  }
  return cols;
}

std::vector<int> CrossProducts::z_columns(int component) const {
  std::vector<int> cols(z_size_[component]);
  for (int j = 0; j < z_size_[component]; ++j) cols[j] = z_start_[component] + j;
  return cols;
}

GlsResult gls_products(const CrossProducts& cp, const Ratios& ratios, const std::vector<int>& columns) {
  const Eigen::MatrixXd& G = cp.gram();
  std::vector<int> zi;
  std::vector<double> sd;
  for (int c = 0; c < 3; ++c) {
    if (!(ratios[c] > 0.0)) continue;
    for (int j : cp.z_columns(c)) {
      zi.push_back(j);
      sd.push_back(std::sqrt(ratios[c]));
    }
  }
  GlsResult out;
  out.S = G(columns, columns);
  if (zi.empty()) return out;
  const Eigen::Map<const Eigen::VectorXd> dh(sd.data(), static_cast<Eigen::Index>(sd.size()));
  Eigen::MatrixXd M = dh.asDiagonal() * G(zi, zi) * dh.asDiagonal();
  M.diagonal().array() += 1.0;
  Eigen::LLT<Eigen::MatrixXd> llt(M);
  if (llt.info() != Eigen::Success) throw NumericalError("low-rank covariance factor is not positive definite");
  Eigen::MatrixXd GT = dh.asDiagonal() * G(zi, columns);
  Eigen::MatrixXd half = llt.matrixL().solve(GT);
  out.S.noalias() -= half.transpose() * half;
  out.log_det_v = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return out;
}

RemlPieces reml_pieces(const CrossProducts& cp, const Ratios& ratios, FixedSet set) {
  std::vector<int> cols = cp.x_columns(set);
  const int p = static_cast<int>(cols.size());
  cols.push_back(cp.y_column());
  GlsResult g = gls_products(cp, ratios, cols);
  Eigen::LLT<Eigen::MatrixXd> llt(g.S.topLeftCorner(p, p));
  if (llt.info() != Eigen::Success) throw NumericalError("generalized cross-product X'V^{-1}X is singular");
  RemlPieces out;
  out.beta = llt.solve(g.S.col(p).head(p));
  out.ypy = g.S(p, p) - g.S.col(p).head(p).dot(out.beta);
  out.ypy = std::max(out.ypy, 1e-300);
  out.log_det_v = g.log_det_v;
  out.log_det_xvx = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  out.objective = (cp.N() - p) * std::log(out.ypy) + out.log_det_v + out.log_det_xvx;
  return out;
}

double compute_qrss(const CrossProducts& cp, const Ratios& ratios, FixedSet set) {
  return reml_pieces(cp, ratios, set).ypy;
}

VarianceRatios fit_reml(const CrossProducts& cp, std::array<bool, 3> active, FixedSet set, const RemlOptions& opt) {
  std::vector<int> comps;
  for (int c = 0; c < 3; ++c)
    if (active[c]) comps.push_back(c);
  auto to_ratios = [&](const std::vector<double>& x) {
    Ratios r{0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < comps.size(); ++i) {
      double v = std::exp(std::clamp(x[i], opt.log_lower, opt.log_upper));
      r[comps[i]] = v < opt.zero_floor ? 0.0 : v;
    }
    return r;
  };
  VarianceRatios out;
  auto objective = [&](const Ratios& r) -> double {
    ++out.evaluations;
    try {
      return reml_pieces(cp, r, set).objective;
    } catch (const NumericalError&) {
      return INFINITY;
    }
  };

  Ratios best_r{0.0, 0.0, 0.0};
  double best_f = objective(best_r);
  if (!comps.empty()) {
    SimplexOptions so;
    so.f_tol = opt.f_tol;
    so.x_tol = INFINITY;
    so.max_evals = opt.max_evals;
    so.step = 2.0;
    so.lower = opt.log_lower;
    so.upper = opt.log_upper;
    bool any_converged = false;
    std::vector<double> best_x(comps.size(), opt.log_lower);
    for (double s : opt.starts) {
      std::vector<double> x0(comps.size(), std::log(s));
      SimplexResult res = nelder_mead([&](const std::vector<double>& x) { return objective(to_ratios(x)); }, x0, so);
      any_converged |= res.converged;
      if (res.value < best_f) {
        best_f = res.value;
        best_r = to_ratios(res.x);
        best_x = res.x;
      }
    }
    if (!any_converged)
      throw ConvergenceError("REML simplex search did not converge", best_x, best_f);
    // boundary candidates: zero out any subset of the active ratios
    const int m = static_cast<int>(comps.size());
    Ratios base = best_r;
    for (int mask = 1; mask < (1 << m); ++mask) {
      Ratios r = base;
      for (int i = 0; i < m; ++i)
        if (mask & (1 << i)) r[comps[i]] = 0.0;
      double f = objective(r);
      if (f < best_f) {
        best_f = f;
        best_r = r;
      }
    }
  }
  if (!std::isfinite(best_f)) throw NumericalError("REML objective is not finite at any candidate");
  RemlPieces pieces = reml_pieces(cp, best_r, set);
  out.ratios = best_r;
  out.objective_value = pieces.objective;
  out.sigma2 = pieces.ypy / (cp.N() - static_cast<int>(cp.x_columns(set).size()));
  return out;
}

Eigen::VectorXd xi_eigenvalues(const CrossProducts& cp, int component, const Ratios& ratios, FixedSet set) {
  std::vector<int> cols = cp.x_columns(set);
  const int p = static_cast<int>(cols.size());
  for (int j : cp.z_columns(component)) cols.push_back(j);
  const int q = static_cast<int>(cols.size()) - p;
  GlsResult g = gls_products(cp, ratios, cols);
  Eigen::LLT<Eigen::MatrixXd> llt(g.S.topLeftCorner(p, p));
  if (llt.info() != Eigen::Success) throw NumericalError("generalized cross-product X'V^{-1}X is singular");
  Eigen::MatrixXd half = llt.matrixL().solve(g.S.topRightCorner(p, q));
  Eigen::MatrixXd Q = g.S.bottomRightCorner(q, q) - half.transpose() * half;
  Q = 0.5 * (Q + Q.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Q, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseMax(0.0);
}

Eigen::VectorXd omega_eigenvalues(const CrossProducts& cp, const std::vector<int>& components, const Ratios& ratios,
                                  FixedSet set) {
  std::vector<int> cols = cp.x_columns(set);
  const int p = static_cast<int>(cols.size());
  std::vector<double> sd;
  for (int c : components) {
    if (!(ratios[c] > 0.0)) continue;
    for (int j : cp.z_columns(c)) {
      cols.push_back(j);
      sd.push_back(std::sqrt(ratios[c]));
    }
  }
  const int q = static_cast<int>(cols.size()) - p;
  if (q == 0) return Eigen::VectorXd();
  Eigen::MatrixXd S = cp.gram()(cols, cols);
  Eigen::LLT<Eigen::MatrixXd> llt(S.topLeftCorner(p, p));
  if (llt.info() != Eigen::Success) throw NumericalError("fixed design is singular");
  Eigen::MatrixXd half = llt.matrixL().solve(S.topRightCorner(p, q));
  Eigen::MatrixXd Q = S.bottomRightCorner(q, q) - half.transpose() * half;
  const Eigen::Map<const Eigen::VectorXd> dh(sd.data(), q);
  Q = dh.asDiagonal() * Q * dh.asDiagonal();
  Q = 0.5 * (Q + Q.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Q, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseMax(0.0);
}

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::S1: return "S1";
    case Stage::S2a: return "S2a";
    case Stage::S2b: return "S2b";
  }
  return "?";
}

StageStatistic pqgf_statistic(const CrossProducts& cp, const ProjectedLmmProblem& problem, Stage stage,
                              const VarianceRatios& full_fit, const VarianceRatios* reduced_fit) {
  StageStatistic st;
  st.stage = stage;
  FixedSet alt_set, null_set;
  Ratios alt_r{}, null_r{};
  switch (stage) {
    case Stage::S1:
      alt_r = full_fit.ratios;
      null_r = alt_r;
      null_r[kLambda] = 0.0;
      alt_set = {true, true};
      null_set = {true, false};
      st.ratios = full_fit;
      st.tested = kLambda;
      st.reml_rank = problem.r();
      st.q_tested = static_cast<int>(problem.Z_lambda.cols());
      st.h_tested = problem.h_lambda;
      break;
    case Stage::S2a:
      alt_r = full_fit.ratios;
      null_r = alt_r;
      null_r[kTau] = 0.0;
      alt_set = {true, true};
      null_set = {false, true};
      st.ratios = full_fit;
      st.tested = kTau;
      st.reml_rank = problem.r();
      st.q_tested = static_cast<int>(problem.Z_tau.cols());
      st.h_tested = problem.h_tau;
      break;
    case Stage::S2b:
      if (!reduced_fit) throw std::invalid_argument("stage 2b needs the reduced-model fit");
      alt_r = reduced_fit->ratios;
      alt_r[kLambda] = 0.0;
      null_r = alt_r;
      null_r[kTau] = 0.0;
      alt_set = {true, false};
      null_set = {false, false};
      st.ratios = *reduced_fit;
      st.tested = kTau;
      st.reml_rank = problem.r0();
      st.q_tested = static_cast<int>(problem.Z_tau.cols());
      st.h_tested = problem.h_tau;
      break;
  }
  st.qrss_alt = compute_qrss(cp, alt_r, alt_set);
  st.qrss_null = compute_qrss(cp, null_r, null_set);
  st.statistic = cp.N() * (st.qrss_null - st.qrss_alt) / st.qrss_alt;
  st.xi = xi_eigenvalues(cp, st.tested, null_r, alt_set);
  return st;
}

}  // namespace prolific
