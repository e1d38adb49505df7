#include "prolific/smoothing.hpp"

#include <cmath>

#include "prolific/errors.hpp"

namespace prolific {

double MeanModelFit::surface(int block, double s, double d) const {
  const Block& b = blocks_[block];
  if (!b.active) return 0.0;
  Eigen::VectorXd bd = d_basis_.evaluate(d);
  Eigen::VectorXd bs = s_basis_.evaluate(s);
  return bd.dot(theta_.middleRows(b.offset, b.rows) * bs);
}

double MeanModelFit::beta(int covariate, double s) const {
  const Block& b = blocks_.at(3 + covariate);
  if (!b.active) return 0.0;
  return theta_.row(b.offset).dot(s_basis_.evaluate(s));
}

std::vector<double> MeanModelFit::smoothing_params() const {
  std::vector<double> out;
  for (const auto& b : blocks_) out.push_back(b.lambda);
  return out;
}

Eigen::RowVectorXd MeanModelFit::design_row(const CurveTable& t, int row) const {
  Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(theta_.rows());
  Eigen::RowVectorXd bd = d_basis_.evaluate(t.day[row]).transpose();
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    const Block& b = blocks_[k];
    if (!b.active) continue;
    switch (k) {
      case 0: c.segment(b.offset, b.rows) = bd; break;
      case 1: if (t.i_tau[row]) c.segment(b.offset, b.rows) = bd; break;
      case 2: if (t.i_lambda[row]) c.segment(b.offset, b.rows) = bd; break;
      default: c(b.offset) = t.covariates(row, static_cast<int>(k) - 3); break;
    }
  }
  return c;
}

Eigen::MatrixXd MeanModelFit::fitted(const CurveTable& table) const {
  Eigen::MatrixXd C(table.rows(), theta_.rows());
  for (int i = 0; i < table.rows(); ++i) C.row(i) = design_row(table, i);
  return C * theta_ * s_basis_.design(table.grid).transpose();
}

namespace {

struct Workspace {
  Eigen::MatrixXd Gc;       // C'C
  Eigen::MatrixXd rhs;      // C'Y Bs U
  Eigen::VectorXd e;        // eigenvalues of the s-penalty relative to the s-Gram
  Eigen::MatrixXd U;        // s-basis transform
  Eigen::MatrixXd Sd;       // normalized d-penalty
  double yy = 0.0;
  double n_obs = 0.0;
  // held-out pieces per subject fold (empty for plain GCV)
  std::vector<Eigen::MatrixXd> fold_Gc, fold_rhs;
  std::vector<double> fold_yy;
};

struct Evaluation {
  double rss = 0.0, edf = 0.0, gcv = 0.0;  // gcv holds the held-out error when folds are set
  Eigen::MatrixXd phi;
  int failed_block = -1;
};

Evaluation evaluate(const Workspace& ws, const std::vector<MeanModelFit::Block>& blocks,
                    const std::vector<double>& scale, const std::vector<double>& lambdas) {
  const int p = static_cast<int>(ws.Gc.rows());
  const int nb = static_cast<int>(ws.e.size());
  Eigen::VectorXd m = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd Pd = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const auto& b = blocks[k];
    if (!b.active) continue;
    double w = lambdas[k] * scale[k];
    m.segment(b.offset, b.rows).setConstant(w);
    if (b.kind == MeanModelFit::BlockKind::Surface) Pd.block(b.offset, b.offset, b.rows, b.rows) = w * ws.Sd;
  }
  Evaluation ev;
  ev.phi.resize(p, nb);
  double fit_term = 0.0, cross = 0.0;
  for (int j = 0; j < nb; ++j) {
    Eigen::MatrixXd A = ws.Gc + Pd;
    A.diagonal() += ws.e(j) * m;
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) {
      ev.failed_block = 0;
      for (std::size_t k = 0; k < blocks.size(); ++k) {
        const auto& b = blocks[k];
        if (!b.active) continue;
        Eigen::LLT<Eigen::MatrixXd> sub(A.block(b.offset, b.offset, b.rows, b.rows));
        if (sub.info() != Eigen::Success) {
          ev.failed_block = static_cast<int>(k);
          break;
        }
      }
      return ev;
    }
    Eigen::VectorXd phi = llt.solve(ws.rhs.col(j));
    ev.phi.col(j) = phi;
    cross += phi.dot(ws.rhs.col(j));
    fit_term += phi.dot(ws.Gc * phi);
    ev.edf += llt.solve(ws.Gc).trace();
  }
  ev.rss = std::max(ws.yy - 2.0 * cross + fit_term, 0.0);
  double denom = ws.n_obs - ev.edf;
  ev.gcv = denom > 0 ? ws.n_obs * ev.rss / (denom * denom) : INFINITY;
  if (!ws.fold_Gc.empty()) {
    double cv = 0.0;
    for (std::size_t f = 0; f < ws.fold_Gc.size(); ++f) {
      const Eigen::MatrixXd Gtrain = ws.Gc - ws.fold_Gc[f];
      double err = ws.fold_yy[f];
      for (int j = 0; j < nb; ++j) {
        Eigen::MatrixXd A = Gtrain + Pd;
        A.diagonal() += ws.e(j) * m;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
        Eigen::VectorXd phi = ldlt.solve(ws.rhs.col(j) - ws.fold_rhs[f].col(j));
        err += phi.dot(ws.fold_Gc[f] * phi) - 2.0 * phi.dot(ws.fold_rhs[f].col(j));
      }
      cv += err;
    }
    ev.gcv = cv / ws.n_obs;
  }
  return ev;
}

}  // namespace

MeanModelFit fit_facm_mean(const CurveTable& table, const SmoothConfig& config) {
  MeanModelFit fit;
  fit.s_basis_ = CubicBSpline(config.s_knots);
  fit.d_basis_ = CubicBSpline(config.d_knots);
  const int nd = fit.d_basis_.size();
  const int L = static_cast<int>(table.covariates.cols());
  const int n = table.rows();

  bool any_tau = false, any_lambda = false;
  for (int i = 0; i < n; ++i) {
    any_tau |= table.i_tau[i] != 0;
    any_lambda |= table.i_lambda[i] != 0;
  }
  int offset = 0;
  auto add_block = [&](const std::string& name, MeanModelFit::BlockKind kind, bool active, int rows) {
    MeanModelFit::Block b;
    b.name = name;
    b.kind = kind;
    b.active = active;
    b.offset = offset;
    b.rows = active ? rows : 0;
    offset += b.rows;
    fit.blocks_.push_back(b);
  };
  add_block("mu", MeanModelFit::BlockKind::Surface, n > 0, nd);
  add_block("tau", MeanModelFit::BlockKind::Surface, any_tau, nd);
  add_block("lambda", MeanModelFit::BlockKind::Surface, any_lambda, nd);
  for (int l = 0; l < L; ++l)
    add_block("covariate " + std::to_string(l), MeanModelFit::BlockKind::Covariate,
              table.covariates.col(l).cwiseAbs().maxCoeff() > 0.0, 1);
  const int p = offset;
  if (p == 0) throw NumericalError("mean model has no data");
  fit.theta_ = Eigen::MatrixXd::Zero(p, fit.s_basis_.size());

  Eigen::MatrixXd C(n, p);
  for (int i = 0; i < n; ++i) C.row(i) = fit.design_row(table, i);

  const Eigen::MatrixXd Bs = fit.s_basis_.design(table.grid);
  const Eigen::MatrixXd Gs = Bs.transpose() * Bs;
  Eigen::MatrixXd Ss = fit.s_basis_.difference_penalty();
  Ss *= Gs.trace() / Ss.trace();
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(Ss, Gs);
  if (ges.info() != Eigen::Success) throw NumericalError("s-basis eigenproblem failed");

  Workspace ws;
  ws.U = ges.eigenvectors();
  ws.e = ges.eigenvalues().cwiseMax(0.0);
  ws.Gc = C.transpose() * C;
  ws.rhs = (C.transpose() * table.values) * (Bs * ws.U);
  ws.yy = table.values.squaredNorm();
  ws.n_obs = static_cast<double>(n) * static_cast<double>(table.grid.size());
  if (config.criterion == SelectionCriterion::SubjectFoldCv) {
    const int nsub = static_cast<int>(table.subject_blocks.size());
    const int folds = std::min(config.cv_folds, nsub);
    if (folds < 2) throw ConfigError("subject-fold cross-validation needs at least 2 subjects");
    const Eigen::MatrixXd BsU = Bs * ws.U;
    ws.fold_Gc.assign(folds, Eigen::MatrixXd::Zero(p, p));
    ws.fold_rhs.assign(folds, Eigen::MatrixXd::Zero(p, ws.rhs.cols()));
    ws.fold_yy.assign(folds, 0.0);
    for (int i = 0; i < nsub; ++i) {
      auto [start, len] = table.subject_blocks[i];
      if (len == 0) continue;
      const int f = i % folds;
      const auto Ci = C.middleRows(start, len);
      const auto Yi = table.values.middleRows(start, len);
      ws.fold_Gc[f].noalias() += Ci.transpose() * Ci;
      ws.fold_rhs[f].noalias() += (Ci.transpose() * Yi) * BsU;
      ws.fold_yy[f] += Yi.squaredNorm();
    }
  }
  Eigen::MatrixXd Sd = fit.d_basis_.difference_penalty();
  ws.Sd = Sd * (nd / Sd.trace());

  std::vector<double> scale(fit.blocks_.size(), 0.0);
  for (std::size_t k = 0; k < fit.blocks_.size(); ++k) {
    const auto& b = fit.blocks_[k];
    if (b.active) scale[k] = std::max(ws.Gc.diagonal().segment(b.offset, b.rows).mean(), 1e-300);
  }

  const auto& grid = config.lambda_grid;
  if (grid.empty()) throw ConfigError("empty smoothing-parameter grid");
  std::vector<double> lambdas(fit.blocks_.size());
  Evaluation best;
  auto fail = [&](const Evaluation& ev) {
    throw NumericalError("mean model is rank deficient in block '" + fit.blocks_[ev.failed_block].name + "'");
  };

  if (!config.fixed_lambdas.empty()) {
    if (config.fixed_lambdas.size() != fit.blocks_.size())
      throw ConfigError("fixed_lambdas needs one value per mean block");
    lambdas = config.fixed_lambdas;
    best = evaluate(ws, fit.blocks_, scale, lambdas);
    if (best.failed_block >= 0) fail(best);
  } else {
    std::vector<int> idx(fit.blocks_.size(), static_cast<int>(grid.size()) / 2);
    for (std::size_t k = 0; k < idx.size(); ++k) lambdas[k] = grid[idx[k]];
    best = evaluate(ws, fit.blocks_, scale, lambdas);
    for (int sweep = 0; sweep < config.max_sweeps; ++sweep) {
      bool changed = false;
      for (std::size_t k = 0; k < fit.blocks_.size(); ++k) {
        if (!fit.blocks_[k].active) continue;
        int chosen = idx[k];
        for (int g = static_cast<int>(grid.size()) - 1; g >= 0; --g) {
          if (g == idx[k]) continue;
          std::vector<double> trial = lambdas;
          trial[k] = grid[g];
          Evaluation ev = evaluate(ws, fit.blocks_, scale, trial);
          if (ev.failed_block >= 0) continue;
          // strict improvement needed: ties keep the larger penalty
          bool better = best.failed_block >= 0 || ev.gcv < best.gcv * (1.0 - 1e-12) ||
                        (ev.gcv <= best.gcv * (1.0 + 1e-12) && grid[g] > lambdas[k]);
          if (better) {
            best = std::move(ev);
            chosen = g;
            lambdas[k] = grid[g];
          }
        }
        if (chosen != idx[k]) {
          idx[k] = chosen;
          changed = true;
        }
      }
      if (!changed) break;
    }
    if (best.failed_block >= 0) fail(best);
  }

  for (std::size_t k = 0; k < fit.blocks_.size(); ++k) fit.blocks_[k].lambda = fit.blocks_[k].active ? lambdas[k] : 0.0;
  fit.theta_ = best.phi * ws.U.transpose();
  fit.rss_ = best.rss;
  fit.edf_ = best.edf;
  fit.criterion_ = best.gcv;
  return fit;
}

Eigen::MatrixXd demean(const CurveTable& table, const MeanModelFit& fit) {
  return table.values - fit.fitted(table);
}

}  // namespace prolific
