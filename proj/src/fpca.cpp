#include "prolific/fpca.hpp"

#include <cmath>

#include "prolific/errors.hpp"
#include "prolific/kernels.hpp"

namespace prolific {

Eigen::VectorXd quadrature_weights(const std::vector<double>& grid, Quadrature rule) {
  const int R = static_cast<int>(grid.size());
  Eigen::VectorXd w = Eigen::VectorXd::Zero(R);
  if (R == 0) return w;
  if (rule == Quadrature::RiemannMean || R == 1) {
    w.setConstant(1.0 / R);
    return w;
  }
  for (int r = 0; r + 1 < R; ++r) {
    double h = 0.5 * (grid[r + 1] - grid[r]);
    w(r) += h;
    w(r + 1) += h;
  }
  return w;
}

Eigen::MatrixXd estimate_marginal_covariance(const Eigen::MatrixXd& residuals) {
  if (residuals.rows() == 0) throw NumericalError("no curves for covariance estimation");
  return kernels::cross_product_parallel(residuals) / static_cast<double>(residuals.rows());
}

Eigen::MatrixXd smooth_covariance(const Eigen::MatrixXd& raw, const std::vector<double>& grid, double bandwidth) {
  const int R = static_cast<int>(grid.size());
  Eigen::MatrixXd out(R, R);
#pragma omp parallel for schedule(dynamic)
  for (int r = 0; r < R; ++r) {
    for (int q = r; q < R; ++q) {
      Eigen::Matrix<double, 6, 6> A = Eigen::Matrix<double, 6, 6>::Zero();
      Eigen::Matrix<double, 6, 1> b = Eigen::Matrix<double, 6, 1>::Zero();
      for (int a = 0; a < R; ++a) {
        double x = grid[a] - grid[r];
        if (std::abs(x) >= bandwidth) continue;
        double ka = 1.0 - (x / bandwidth) * (x / bandwidth);
        for (int c = 0; c < R; ++c) {
          if (c == a) continue;
          double y = grid[c] - grid[q];
          if (std::abs(y) >= bandwidth) continue;
          double k = ka * (1.0 - (y / bandwidth) * (y / bandwidth));
          Eigen::Matrix<double, 6, 1> f;
          f << 1.0, x, y, x * x, x * y, y * y;
          A.noalias() += k * f * f.transpose();
          b.noalias() += k * raw(a, c) * f;
        }
      }
      Eigen::LDLT<Eigen::Matrix<double, 6, 6>> ldlt(A);
      double v = ldlt.info() == Eigen::Success ? ldlt.solve(b)(0) : raw(r, q);
      if (!std::isfinite(v)) v = raw(r, q);
      out(r, q) = v;
      out(q, r) = v;
    }
  }
  return out;
}

MarginalEigenSystem eigendecompose(const Eigen::MatrixXd& cov, const std::vector<double>& grid, double pve,
                                   Quadrature rule) {
  const int R = static_cast<int>(grid.size());
  if (cov.rows() != R || cov.cols() != R) throw ValidationError("covariance does not match the grid");
  if (!(pve > 0.0 && pve <= 1.0)) throw ConfigError("pve must be in (0,1]");
  MarginalEigenSystem es;
  es.grid = grid;
  es.pve_target = pve;
  es.weights = quadrature_weights(grid, rule);
  const Eigen::VectorXd sw = es.weights.cwiseSqrt();
  es.trace = es.weights.dot(cov.diagonal());

  Eigen::MatrixXd M = sw.asDiagonal() * (0.5 * (cov + cov.transpose())) * sw.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(M);
  if (solver.info() != Eigen::Success) throw NumericalError("covariance eigendecomposition failed");
  const Eigen::VectorXd& vals = solver.eigenvalues();  // ascending
  const double top = vals(R - 1);
  if (!(top > 0.0) || !(es.trace > 0.0)) throw NumericalError("marginal covariance has no variance");

  int positive = 0;
  for (int i = R - 1; i >= 0 && vals(i) > 1e-13 * top; --i) ++positive;
  es.all_eigenvalues.resize(positive);
  for (int i = 0; i < positive; ++i) es.all_eigenvalues(i) = vals(R - 1 - i);

  int K = positive;
  double cum = 0.0;
  const double target = pve * es.trace - 1e-12 * es.trace;
  for (int i = 0; i < positive; ++i) {
    cum += es.all_eigenvalues(i);
    if (cum >= target) {
      K = i + 1;
      break;
    }
  }
  es.eigenvalues = es.all_eigenvalues.head(K);
  es.eigenfunctions.resize(R, K);
  for (int k = 0; k < K; ++k) {
    Eigen::VectorXd f = solver.eigenvectors().col(R - 1 - k).cwiseQuotient(sw);
    Eigen::Index arg;
    f.cwiseAbs().maxCoeff(&arg);
    if (f(arg) < 0) f = -f;
    es.eigenfunctions.col(k) = f;
  }
  return es;
}

Eigen::MatrixXd quasi_project(const Eigen::MatrixXd& curves, const std::vector<double>& grid,
                              const MarginalEigenSystem& eig) {
  if (grid != eig.grid || curves.cols() != static_cast<Eigen::Index>(grid.size()))
    throw ValidationError("curves are not sampled on the eigensystem grid");
  return kernels::project_parallel(curves, eig.weights, eig.eigenfunctions);
}

MarginalEigenSystem marginal_fpca(const Eigen::MatrixXd& residuals, const std::vector<double>& grid,
                                  const FpcaConfig& config) {
  Eigen::MatrixXd cov = estimate_marginal_covariance(residuals);
  if (config.smoothing == CovarianceSmoothing::LocalQuadratic) cov = smooth_covariance(cov, grid, config.bandwidth);
  return eigendecompose(cov, grid, config.pve, config.quadrature);
}

}  // namespace prolific
