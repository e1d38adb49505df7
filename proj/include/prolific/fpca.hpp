#pragma once

#include <vector>

#include <Eigen/Dense>

#include "prolific/data_model.hpp"

namespace prolific {

enum class Quadrature { Trapezoid, RiemannMean };
enum class CovarianceSmoothing { Raw, LocalQuadratic };

struct FpcaConfig {
  double pve = 0.90;
  Quadrature quadrature = Quadrature::Trapezoid;
  CovarianceSmoothing smoothing = CovarianceSmoothing::Raw;
  double bandwidth = 0.1;  // local-quadratic half-width on [0,1]
};

/// Integration weights on the grid.
Eigen::VectorXd quadrature_weights(const std::vector<double>& grid, Quadrature rule);

/// Pooled covariance N^{-1} sum of outer products of residual curves, and the
/// local-quadratic smoothed version (diagonal re-imputed from the surface).
Eigen::MatrixXd estimate_marginal_covariance(const Eigen::MatrixXd& residuals);
Eigen::MatrixXd smooth_covariance(const Eigen::MatrixXd& raw, const std::vector<double>& grid, double bandwidth);

struct MarginalEigenSystem {
  std::vector<double> grid;
  Eigen::VectorXd weights;
  Eigen::MatrixXd eigenfunctions;  // R x K
  Eigen::VectorXd eigenvalues;     // K, nonincreasing
  Eigen::VectorXd all_eigenvalues;  // every positive eigenvalue
  double pve_target = 0.9;
  double trace = 0.0;
  int K() const { return static_cast<int>(eigenvalues.size()); }
};

/// Throws NumericalError when the covariance carries no variance.
MarginalEigenSystem eigendecompose(const Eigen::MatrixXd& cov, const std::vector<double>& grid, double pve,
                                   Quadrature rule = Quadrature::Trapezoid);

/// Scores of each curve on each eigenfunction (curves x K). Throws
/// ValidationError on a grid mismatch.
Eigen::MatrixXd quasi_project(const Eigen::MatrixXd& curves, const std::vector<double>& grid,
                              const MarginalEigenSystem& eig);

/// Convenience: covariance (raw or smoothed per config) then eigendecompose.
MarginalEigenSystem marginal_fpca(const Eigen::MatrixXd& residuals, const std::vector<double>& grid,
                                  const FpcaConfig& config);

}  // namespace prolific
