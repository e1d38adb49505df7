#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "prolific/lmm.hpp"
#include "prolific/rng.hpp"

namespace prolific {

struct NullDims {
  int N = 0;
  int rank = 0;      // r, or r0 for the reduced model
  int q_tested = 0;  // random-effect columns of the tested component
  int h_tested = 1;  // degree of the tested component
};

enum class NuisanceMode {
  PlugIn,    // nuisance ratios held at their data estimates
  Profiled,  // nuisance ratios re-minimized in every draw
};

/// Spectral pieces of a stage's null. `xi` is evaluated at the data estimates
/// of the nuisance ratios; the callables are only needed for Profiled mode.
struct NullStructures {
  Eigen::VectorXd xi;
  std::vector<double> nuisance_hat;
  std::function<Eigen::VectorXd(const std::vector<double>&)> xi_at;
  std::function<Eigen::VectorXd(const std::vector<double>&)> omega_at;
};

struct NullDistributionSample {
  Stage stage = Stage::S1;
  std::vector<double> draws;  // sorted ascending
  int nsim = 0;
  std::uint64_t seed = 0;
  int restarts = 0;
  int nonconverged = 0;
  int resampled = 0;
};

struct NullOptions {
  int nsim = 2000;
  std::uint64_t seed = 1;
  NuisanceMode mode = NuisanceMode::PlugIn;
  std::vector<double> starts = {1e-2, 1.0, 1e2};
  double f_tol = 1e-7;
};

/// Random pieces of one draw.
struct NullDraw {
  Eigen::VectorXd u;
  double chi_rest = 0.0;   // chi-square with N - rank - q dof
  double chi_fixed = 0.0;  // chi-square with h + 1 dof
};

NullDraw draw_null_pieces(Engine& engine, const NullDims& dims);

/// (N - rank) log(sum u^2/(1+g xi) + chi_rest) + sum log(1 + g xi).
double null_objective(double ratio, const Eigen::VectorXd& xi, const NullDraw& d, const NullDims& dims);

/// Statistic evaluated at a given tested ratio.
double null_statistic(double ratio, const Eigen::VectorXd& xi, const NullDraw& d, const NullDims& dims);

/// Plug-in minimizer of null_objective over ratio >= 0.
struct InnerResult {
  double ratio = 0.0;
  double value = 0.0;
  bool converged = true;
};
InnerResult minimize_null_objective(const Eigen::VectorXd& xi, const NullDraw& d, const NullDims& dims,
                                    const NullOptions& options);

NullDistributionSample sample_null(Stage stage, const NullStructures& structures, const NullDims& dims,
                                   const NullOptions& options);

/// (1 + #{draws >= statistic}) / (1 + nsim).
double p_value(double statistic, const NullDistributionSample& sample);

/// Smallest draw whose upper-tail mass is at most alpha.
double critical_value(const NullDistributionSample& sample, double alpha);

}  // namespace prolific
