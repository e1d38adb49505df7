#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "prolific/prolific.hpp"

namespace prolific {

enum class AdzcMode { ChisqMixture, Bootstrap };

struct AdzcOptions {
  AdzcMode mode = AdzcMode::ChisqMixture;
  int B = 500;             // bootstrap resamples
  int mixture_draws = 20000;
  int grid = 101;          // evaluation points for the L2 norm
  std::uint64_t seed = 1;
};

struct AdzcResult {
  double statistic = 0.0;
  double p_value = 1.0;
  Eigen::VectorXd tau_hat;  // penalized estimate on the evaluation grid
  Eigen::VectorXd weights;  // mixture weights (chi-square mode)
};

/// L2-norm test of the treatment curve of one direction. The model keeps the
/// carryover terms when `with_carryover` is set, else it uses the reduced fit.
/// Throws ConfigError for B < 100 in bootstrap mode.
AdzcResult run_adzc(PreparedLayer& layer, bool with_carryover, const AdzcOptions& options);

}  // namespace prolific
