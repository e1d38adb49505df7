#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "prolific/data_model.hpp"
#include "prolific/splines.hpp"

namespace prolific {

enum class SelectionCriterion {
  Gcv,            // generalized cross-validation over all samples
  SubjectFoldCv,  // prediction error on held-out subjects
};

struct SmoothConfig {
  int s_knots = 20;
  int d_knots = 5;
  /// Candidate penalties, shared by every block. Relative to the block's
  /// average Gram diagonal, so 1 means "penalty as strong as the data".
  std::vector<double> lambda_grid = {1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2};
  int max_sweeps = 5;
  SelectionCriterion criterion = SelectionCriterion::SubjectFoldCv;
  int cv_folds = 10;
  /// If non-empty: one penalty per block (mu, tau, lambda, covariates...),
  /// used as-is with no search.
  std::vector<double> fixed_lambdas;
};

class MeanModelFit {
 public:
  enum class BlockKind { Surface, Covariate };
  struct Block {
    std::string name;
    BlockKind kind = BlockKind::Surface;
    bool active = false;
    int offset = 0;  // first row in the stacked coefficient matrix
    int rows = 0;
    double lambda = 0.0;
  };

  MeanModelFit() : s_basis_(20), d_basis_(5) {}

  double mu(double s, double d) const { return surface(0, s, d); }
  double tau(double s, double d) const { return surface(1, s, d); }
  double lambda(double s, double d) const { return surface(2, s, d); }
  double beta(int covariate, double s) const;

  /// Fitted curves for every row of the table (curves x R).
  Eigen::MatrixXd fitted(const CurveTable& table) const;

  const std::vector<Block>& blocks() const { return blocks_; }
  std::vector<double> smoothing_params() const;
  double rss() const { return rss_; }
  /// Value of the selection criterion at the chosen penalties.
  double criterion() const { return criterion_; }
  double edf() const { return edf_; }

 private:
  friend MeanModelFit fit_facm_mean(const CurveTable&, const SmoothConfig&);
  double surface(int block, double s, double d) const;
  Eigen::RowVectorXd design_row(const CurveTable& t, int row) const;

  CubicBSpline s_basis_;
  CubicBSpline d_basis_;
  std::vector<Block> blocks_;
  Eigen::MatrixXd theta_;  // stacked coefficients x s-basis
  double rss_ = 0.0, criterion_ = 0.0, edf_ = 0.0;
};

/// Penalized least-squares tensor-spline fit of the mean, treatment,
/// carryover and covariate effects with GCV-selected penalties.
/// Throws NumericalError naming the block if the penalized system is singular.
MeanModelFit fit_facm_mean(const CurveTable& table, const SmoothConfig& config = {});

/// Residual curves Y - fitted.
Eigen::MatrixXd demean(const CurveTable& table, const MeanModelFit& fit);

}  // namespace prolific
