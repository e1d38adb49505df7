#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "prolific/data_model.hpp"
#include "prolific/splines.hpp"

namespace prolific {

/// One projected direction: a score per curve plus the curve metadata.
struct ProjectedLayer {
  Eigen::VectorXd score;
  std::vector<double> day;
  std::vector<int> period;
  std::vector<int> i_tau;
  std::vector<int> i_lambda;
  Eigen::MatrixXd covariates;
  std::vector<std::pair<int, int>> subject_blocks;
};

ProjectedLayer make_layer(const CurveTable& table, const Eigen::MatrixXd& scores, int k);

struct DesignConfig {
  int h_mu = 1;
  int h_tau = 1;
  int h_lambda = 1;
  KnotRule knot_rule;
};

enum Component { kMu = 0, kTau = 1, kLambda = 2 };

struct ProjectedLmmProblem {
  Eigen::VectorXd y;
  Eigen::MatrixXd X_b, X_tau, X_lambda;
  Eigen::MatrixXd Z_mu, Z_tau, Z_lambda;
  std::vector<std::pair<int, int>> subject_blocks;
  std::vector<int> period;
  std::vector<double> day;
  std::vector<double> knots;
  int h_mu = 1, h_tau = 1, h_lambda = 1, L = 0;

  int N() const { return static_cast<int>(y.size()); }
  /// Rank of the full fixed design.
  int r() const { return L + h_mu + h_tau + h_lambda + 3; }
  /// Rank without the carryover fixed effects.
  int r0() const { return r() - (h_lambda + 1); }
  const Eigen::MatrixXd& Z(int c) const { return c == kMu ? Z_mu : c == kTau ? Z_tau : Z_lambda; }
  const Eigen::MatrixXd& X(int c) const { return c == kMu ? X_b : c == kTau ? X_tau : X_lambda; }
};

/// Throws ValidationError when a required indicator block is empty.
ProjectedLmmProblem build_design(const ProjectedLayer& layer, const DesignConfig& config,
                                 const std::vector<double>& knots);
ProjectedLmmProblem build_design(const ProjectedLayer& layer, const DesignConfig& config = {});

enum class CovarianceMethod { CompoundSymmetry, ScoreFpca };

struct WithinSubjectCovariance {
  CovarianceMethod method = CovarianceMethod::CompoundSymmetry;
  std::vector<Eigen::MatrixXd> blocks;
  std::vector<Eigen::MatrixXd> inv_sqrt;
  double v_between = 0.0;
  double v_error = 0.0;
  bool nugget_floored = false;
};

/// Residuals of the OLS fit on the full fixed design.
Eigen::VectorXd working_residuals(const ProjectedLmmProblem& problem);

WithinSubjectCovariance estimate_within_covariance(const ProjectedLmmProblem& problem,
                                                   CovarianceMethod method = CovarianceMethod::CompoundSymmetry);
/// Blocks given directly (used by tests); computes the inverse square roots.
WithinSubjectCovariance covariance_from_blocks(std::vector<Eigen::MatrixXd> blocks);

/// Symmetric inverse square root of an SPD matrix. Throws NumericalError if
/// the smallest eigenvalue is not positive.
Eigen::MatrixXd inverse_sqrt_spd(const Eigen::MatrixXd& S);

/// Every subject block of y and of each design matrix premultiplied by that
/// subject's inverse square root.
ProjectedLmmProblem whiten(const ProjectedLmmProblem& problem, const WithinSubjectCovariance& cov);

/// Column-selection of the fixed design.
struct FixedSet {
  bool tau = true;
  bool lambda = true;
};

/// Gram matrix of [X_b X_tau X_lambda Z_mu Z_tau Z_lambda y], computed once
/// per whitened problem. Every generalized least squares quantity is read from
/// it through low-rank identities.
class CrossProducts {
 public:
  CrossProducts() = default;
  explicit CrossProducts(const ProjectedLmmProblem& problem);

  int N() const { return N_; }
  int L() const { return L_; }
  const Eigen::MatrixXd& gram() const { return G_; }
  std::vector<int> x_columns(FixedSet set) const;
  std::vector<int> z_columns(int component) const;
  int y_column() const { return y_; }
  int x_block_start(int component) const { return x_start_[component]; }
  int x_block_size(int component) const { return x_size_[component]; }
  int z_block_start(int component) const { return z_start_[component]; }
  int z_block_size(int component) const { return z_size_[component]; }

 private:
  Eigen::MatrixXd G_;
  int N_ = 0, L_ = 0, y_ = 0;
  std::array<int, 3> x_start_{}, x_size_{}, z_start_{}, z_size_{};
};

using Ratios = std::array<double, 3>;  // (mu, tau, lambda) random-effect variance ratios

struct GlsResult {
  Eigen::MatrixXd S;  // [a,b] = a' V^{-1} b over the requested columns
  double log_det_v = 0.0;
};

/// a'V^{-1}b for every pair of requested Gram columns, V = I + sum_c ratio_c Z_c Z_c'.
GlsResult gls_products(const CrossProducts& cp, const Ratios& ratios, const std::vector<int>& columns);

/// y'P y with P = V^{-1} - V^{-1}X(X'V^{-1}X)^{-1}X'V^{-1}. Throws NumericalError
/// when X'V^{-1}X is singular.
double compute_qrss(const CrossProducts& cp, const Ratios& ratios, FixedSet set);

struct RemlPieces {
  double ypy = 0.0;
  double log_det_v = 0.0;
  double log_det_xvx = 0.0;
  double objective = 0.0;  // (N-p) log ypy + log|V| + log|X'V^{-1}X|
  Eigen::VectorXd beta;
};
RemlPieces reml_pieces(const CrossProducts& cp, const Ratios& ratios, FixedSet set);

struct VarianceRatios {
  Ratios ratios{0.0, 0.0, 0.0};
  double sigma2 = 0.0;
  double objective_value = 0.0;
  int evaluations = 0;
  double pi() const { return ratios[kMu]; }
  double eta() const { return ratios[kTau]; }
  double gamma() const { return ratios[kLambda]; }
};

struct RemlOptions {
  std::vector<double> starts = {1e-2, 1.0, 1e2};
  double log_lower = -20.0;
  double log_upper = 12.0;
  double zero_floor = 1e-8;
  double f_tol = 1e-7;
  int max_evals = 2000;
};

/// Maximize the restricted likelihood over the ratios of the active
/// components. Inactive components are held at zero. Throws ConvergenceError.
VarianceRatios fit_reml(const CrossProducts& cp, std::array<bool, 3> active, FixedSet set,
                        const RemlOptions& options = {});

/// Eigenvalues (ascending, clipped at 0) of Z_c' P Z_c where P is the
/// generalized residual projector for (ratios, set).
Eigen::VectorXd xi_eigenvalues(const CrossProducts& cp, int component, const Ratios& ratios, FixedSet set);

/// Eigenvalues of D^{1/2} Z' (I - H_X) Z D^{1/2} over the given components.
Eigen::VectorXd omega_eigenvalues(const CrossProducts& cp, const std::vector<int>& components,
                                  const Ratios& ratios, FixedSet set);

enum class Stage { S1, S2a, S2b };
const char* stage_name(Stage s);

struct StageStatistic {
  Stage stage = Stage::S1;
  double statistic = 0.0;
  double qrss_null = 0.0;
  double qrss_alt = 0.0;
  VarianceRatios ratios;        // the ratios the statistic was evaluated at
  Eigen::VectorXd xi;           // eigenvalues for the null
  int reml_rank = 0;            // r (S1, S2a) or r0 (S2b)
  int q_tested = 0;             // random-effect count of the tested component
  int h_tested = 0;             // degree of the tested component
  int tested = kLambda;         // component under test
};

/// Stage statistics. S1 and S2a use the full-model fit; S2b uses the
/// reduced-model fit over {mu, tau}.
StageStatistic pqgf_statistic(const CrossProducts& cp, const ProjectedLmmProblem& problem, Stage stage,
                              const VarianceRatios& full_fit, const VarianceRatios* reduced_fit = nullptr);

}  // namespace prolific
