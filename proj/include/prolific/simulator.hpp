#pragma once

#include <cstdint>
#include <vector>

#include "prolific/data_model.hpp"

namespace prolific {

struct SimConfig {
  int n = 50;
  int m_min = 8;
  int m_max = 12;
  int grid_size = 101;
  double delta = 0.0;
  double gamma_rel = 0.0;
  double beta_a = 2.0;
  double beta_b = 4.0;
  double var_zeta1 = 1.0;
  double var_zeta2 = 0.7;
  double var_r1 = 0.5;
  double var_r2 = 0.1;
  double var_wn = 0.25;
  std::uint64_t seed = 1;

  /// Throws ConfigError.
  void validate() const;
};

/// Beta(a,b) density, zero outside [0,1]. Throws std::domain_error for
/// non-positive shapes.
double beta_density(double x, double a, double b);

struct TrueSurfaces {
  double delta = 0.0, gamma_rel = 0.0, beta_a = 2.0, beta_b = 4.0;

  explicit TrueSurfaces(const SimConfig& c)
      : delta(c.delta), gamma_rel(c.gamma_rel), beta_a(c.beta_a), beta_b(c.beta_b) {}

  double mu(double s, double d) const;
  double tau(double s, double d) const;
  double lambda(double s, double d) const;
};

double sim_phi1(double s);
double sim_phi2(double s);

/// Latent per-curve scores on the two generating directions (subject plus
/// curve level), stored in the same order as flatten().
struct LatentScores {
  std::vector<double> score1;
  std::vector<double> score2;
};

FunctionalCrossoverDataset generate_dataset(const SimConfig& config, LatentScores* latent = nullptr);

}  // namespace prolific
