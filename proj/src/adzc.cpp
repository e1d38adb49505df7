#include "prolific/adzc.hpp"

#include <algorithm>
#include <array>

#include "prolific/errors.hpp"
#include "prolific/fpca.hpp"
#include "prolific/rng.hpp"

namespace prolific {

namespace {

struct PenalizedModel {
  std::vector<int> cols;   // Gram columns of the fixed and kept random parts
  Eigen::VectorXd penalty;  // 0 for fixed columns, 1/ratio for random columns
  std::vector<int> tau_pos;  // positions within cols carrying the treatment curve
  std::vector<int> tau_kind;  // -1 for fixed power d^e (e stored separately), q for knot q
  std::vector<int> tau_power;
};

PenalizedModel make_model(const CrossProducts& cp, const Ratios& ratios, bool with_tau, bool with_lambda) {
  PenalizedModel m;
  std::vector<double> pen;
  for (int c = 0; c < 3; ++c) {
    if (c == kTau && !with_tau) continue;
    if (c == kLambda && !with_lambda) continue;
    for (int j = 0; j < cp.x_block_size(c); ++j) {
      if (c == kTau) {
        m.tau_pos.push_back(static_cast<int>(m.cols.size()));
        m.tau_kind.push_back(-1);
        m.tau_power.push_back(j);
      }
      m.cols.push_back(cp.x_block_start(c) + j);
      pen.push_back(0.0);
    }
  }
  for (int c = 0; c < 3; ++c) {
    if (c == kTau && !with_tau) continue;
    if (c == kLambda && !with_lambda) continue;
    if (!(ratios[c] > 0.0)) continue;
    for (int j = 0; j < cp.z_block_size(c); ++j) {
      if (c == kTau) {
        m.tau_pos.push_back(static_cast<int>(m.cols.size()));
        m.tau_kind.push_back(j);
        m.tau_power.push_back(0);
      }
      m.cols.push_back(cp.z_block_start(c) + j);
      pen.push_back(1.0 / ratios[c]);
    }
  }
  m.penalty = Eigen::Map<Eigen::VectorXd>(pen.data(), static_cast<Eigen::Index>(pen.size()));
  return m;
}

// Rows of the raw (or whitened) design matrix restricted to the model columns.
Eigen::MatrixXd model_design(const ProjectedLmmProblem& p, const CrossProducts& cp, const std::vector<int>& cols) {
  Eigen::MatrixXd full(p.N(), cp.y_column());
  full << p.X_b, p.X_tau, p.X_lambda, p.Z_mu, p.Z_tau, p.Z_lambda;
  return full(Eigen::all, cols);
}

}  // namespace

AdzcResult run_adzc(PreparedLayer& layer, bool with_carryover, const AdzcOptions& options) {
  if (options.mode == AdzcMode::Bootstrap && options.B < 100) throw ConfigError("bootstrap needs B >= 100");
  if (options.grid < 2) throw ConfigError("evaluation grid needs at least 2 points");
  const CrossProducts& cp = layer.cp;
  const VarianceRatios& fit = with_carryover ? layer.full_fit : layer.reduced();
  Ratios ratios = fit.ratios;
  if (!with_carryover) ratios[kLambda] = 0.0;

  PenalizedModel model = make_model(cp, ratios, true, with_carryover);
  const Eigen::MatrixXd& G = cp.gram();
  Eigen::MatrixXd A = G(model.cols, model.cols);
  A.diagonal() += model.penalty;
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success) throw NumericalError("penalized treatment fit is singular");
  std::vector<int> ycol{cp.y_column()};
  Eigen::VectorXd theta = llt.solve(G(model.cols, ycol)).col(0);

  // Evaluation basis for the treatment curve.
  std::vector<double> grid(options.grid);
  for (int g = 0; g < options.grid; ++g) grid[g] = static_cast<double>(g) / (options.grid - 1);
  const Eigen::VectorXd w = quadrature_weights(grid, Quadrature::Trapezoid);
  const int pt = static_cast<int>(model.tau_pos.size());
  Eigen::MatrixXd Bt(options.grid, pt);
  const int h = layer.raw.h_tau;
  for (int g = 0; g < options.grid; ++g) {
    for (int j = 0; j < pt; ++j) {
      if (model.tau_kind[j] < 0) {
        Bt(g, j) = std::pow(grid[g], model.tau_power[j]);
      } else {
        double t = grid[g] - layer.raw.knots[model.tau_kind[j]];
        Bt(g, j) = t > 0 ? (h == 0 ? 1.0 : std::pow(t, h)) : 0.0;
      }
    }
  }
  Eigen::VectorXd theta_tau(pt);
  for (int j = 0; j < pt; ++j) theta_tau(j) = theta(model.tau_pos[j]);

  AdzcResult out;
  out.tau_hat = Bt * theta_tau;
  out.statistic = w.dot(out.tau_hat.cwiseAbs2());
  const Eigen::MatrixXd Qt = Bt.transpose() * w.asDiagonal() * Bt;

  if (options.mode == AdzcMode::ChisqMixture) {
    Eigen::MatrixXd Ainv = llt.solve(Eigen::MatrixXd::Identity(A.rows(), A.cols()));
    Eigen::MatrixXd CC = G(model.cols, model.cols);
    Eigen::MatrixXd cov = fit.sigma2 * Ainv * CC * Ainv;
    Eigen::MatrixXd cov_tau(pt, pt);
    for (int a = 0; a < pt; ++a)
      for (int b = 0; b < pt; ++b) cov_tau(a, b) = cov(model.tau_pos[a], model.tau_pos[b]);
    // nonzero eigenvalues of W^{1/2} B Cov B' W^{1/2} equal those of Cov^{1/2} Qt Cov^{1/2}
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ce(0.5 * (cov_tau + cov_tau.transpose()));
    Eigen::MatrixXd half = ce.eigenvectors() * ce.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                           ce.eigenvectors().transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> we(half * Qt * half, Eigen::EigenvaluesOnly);
    std::vector<double> weights;
    const double top = we.eigenvalues().size() ? we.eigenvalues().maxCoeff() : 0.0;
    for (Eigen::Index i = 0; i < we.eigenvalues().size(); ++i)
      if (we.eigenvalues()(i) > 1e-12 * top) weights.push_back(we.eigenvalues()(i));
    out.weights = Eigen::Map<Eigen::VectorXd>(weights.data(), static_cast<Eigen::Index>(weights.size()));
    int exceed = 0;
    Engine eng = make_stream(options.seed, {0x6D6978ULL});
    std::normal_distribution<double> z(0.0, 1.0);
    for (int i = 0; i < options.mixture_draws; ++i) {
      double s = 0.0;
      for (double wj : weights) {
        double v = z(eng);
        s += wj * v * v;
      }
      if (s >= out.statistic) ++exceed;
    }
    out.p_value = (1.0 + exceed) / (1.0 + options.mixture_draws);
    return out;
  }

  // Bootstrap under the no-treatment model.
  PenalizedModel null_model = make_model(cp, ratios, false, with_carryover);
  Eigen::MatrixXd A0 = G(null_model.cols, null_model.cols);
  A0.diagonal() += null_model.penalty;
  Eigen::LLT<Eigen::MatrixXd> llt0(A0);
  if (llt0.info() != Eigen::Success) throw NumericalError("penalized null fit is singular");
  Eigen::VectorXd theta0 = llt0.solve(G(null_model.cols, ycol)).col(0);
  const ProjectedLmmProblem& raw = layer.raw;
  const Eigen::VectorXd fitted0 = model_design(raw, cp, null_model.cols) * theta0;
  const Eigen::VectorXd resid0 = raw.y - fitted0;

  // Linear map from a whitened response to the treatment coefficients.
  const Eigen::MatrixXd Cw = model_design(layer.whitened, cp, model.cols);
  Eigen::MatrixXd sel = Eigen::MatrixXd::Zero(A.rows(), pt);
  for (int j = 0; j < pt; ++j) sel(model.tau_pos[j], j) = 1.0;
  const Eigen::MatrixXd Lt = (Cw * llt.solve(sel)).transpose();  // pt x N

  const auto& blocks = raw.subject_blocks;
  const int n = static_cast<int>(blocks.size());
  // rows of each subject by period
  std::vector<std::array<std::vector<int>, kPeriods>> by_period(n);
  for (int i = 0; i < n; ++i)
    for (int r = blocks[i].first; r < blocks[i].first + blocks[i].second; ++r)
      by_period[i][raw.period[r] - 1].push_back(r);

  std::vector<char> exceed(options.B, 0);
#pragma omp parallel for schedule(static)
  for (int b = 0; b < options.B; ++b) {
    Engine eng = make_stream(options.seed, {0x626F6FULL, static_cast<std::uint64_t>(b)});
    std::uniform_int_distribution<int> pick(0, n - 1);
    Eigen::VectorXd ystar(raw.N());
    for (int i = 0; i < n; ++i) {
      const int donor = pick(eng);
      auto [start, len] = blocks[i];
      if (len == 0) continue;
      Eigen::VectorXd yi(len);
      for (int p = 0; p < kPeriods; ++p) {
        const auto& mine = by_period[i][p];
        const auto& theirs = by_period[donor][p];
        for (std::size_t j = 0; j < mine.size(); ++j) {
          int src;
          if (!theirs.empty()) {
            src = theirs[j % theirs.size()];
          } else {
            int dl = blocks[donor].second;
            src = dl > 0 ? blocks[donor].first + static_cast<int>((mine[j] - start) % dl) : -1;
          }
          yi(mine[j] - start) = fitted0(mine[j]) + (src >= 0 ? resid0(src) : 0.0);
        }
      }
      ystar.segment(start, len) = layer.covariance.inv_sqrt[i] * yi;
    }
    Eigen::VectorXd c = Lt * ystar;
    double t = c.dot(Qt * c);
    exceed[b] = t >= out.statistic ? 1 : 0;
  }
  int count = 0;
  for (char e : exceed) count += e;
  out.p_value = (1.0 + count) / (1.0 + options.B);
  return out;
}

}  // namespace prolific
