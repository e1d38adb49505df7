#include "prolific/simulator.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "prolific/errors.hpp"
#include "prolific/rng.hpp"

namespace prolific {

void SimConfig::validate() const {
  if (n < 2) throw ConfigError("sim.n must be at least 2");
  if (m_min < 1 || m_max < m_min) throw ConfigError("sim.m_range must be positive and ordered");
  if (grid_size < 4) throw ConfigError("sim.grid_size must be at least 4");
  if (!(delta >= 0.0)) throw ConfigError("sim.delta must be >= 0");
  if (!(gamma_rel >= 0.0)) throw ConfigError("sim.gamma_rel must be >= 0");
  if (!(beta_a > 0.0 && beta_b > 0.0)) throw ConfigError("sim.beta shapes must be > 0");
  for (double v : {var_zeta1, var_zeta2, var_r1, var_r2, var_wn})
    if (!(v > 0.0)) throw ConfigError("sim variances must be > 0");
}

double beta_density(double x, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw std::domain_error("beta_density: shapes must be positive");
  if (x < 0.0 || x > 1.0) return 0.0;
  if ((x == 0.0 && a > 1.0) || (x == 1.0 && b > 1.0)) return 0.0;
  double log_beta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  return std::exp((a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - log_beta);
}

double TrueSurfaces::mu(double s, double d) const {
  return 2.0 * d * std::cos(std::numbers::pi * s / 2.0);
}

double TrueSurfaces::tau(double s, double d) const {
  if (delta == 0.0) return 0.0;
  return delta * std::cos(std::numbers::pi * s / 2.0) * (1.0 + 4.0 * beta_density(0.8 * d, beta_a, beta_b));
}

double TrueSurfaces::lambda(double s, double d) const {
  if (delta == 0.0 || gamma_rel == 0.0) return 0.0;
  return delta * gamma_rel * std::cos(std::numbers::pi * s / 2.0) *
         (1.0 + 4.0 * beta_density(2.0 * d / 3.0 + 0.8, beta_a, beta_b));
}

double sim_phi1(double s) { return std::numbers::sqrt2 * std::sin(2.0 * std::numbers::pi * s); }
double sim_phi2(double s) { return std::numbers::sqrt2 * std::cos(2.0 * std::numbers::pi * s); }

namespace {

struct SubjectDraw {
  SubjectRecord record;
  std::vector<double> score1, score2;
};

SubjectDraw draw_subject(const SimConfig& c, int i, const std::vector<double>& grid,
                         const std::vector<double>& phi1, const std::vector<double>& phi2,
                         const TrueSurfaces& truth) {
  Engine eng = make_stream(c.seed, {static_cast<std::uint64_t>(i)});
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_int_distribution<int> m_dist(c.m_min, c.m_max);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const int R = static_cast<int>(grid.size());

  SubjectDraw out;
  SubjectRecord& rec = out.record;
  rec.id = std::to_string(i + 1);
  rec.group = i < (c.n + 1) / 2 ? 1 : 2;
  const double zeta1 = std::sqrt(c.var_zeta1) * z(eng);
  const double zeta2 = std::sqrt(c.var_zeta2) * z(eng);
  const double sd_wn = std::sqrt(c.var_wn);
  for (int p = 1; p <= kPeriods; ++p) {
    const bool on_tau = tau_indicator(rec.group, p);
    const bool on_lambda = lambda_indicator(rec.group, p);
    const int m = m_dist(eng);
    for (int j = 0; j < m; ++j) {
      CurveObservation obs;
      obs.day = u01(eng);
      const double r1 = std::sqrt(c.var_r1) * z(eng);
      const double r2 = std::sqrt(c.var_r2) * z(eng);
      const double a1 = zeta1 + r1, a2 = zeta2 + r2;
      obs.values.resize(R);
      for (int r = 0; r < R; ++r) {
        const double s = grid[r];
        double y = truth.mu(s, obs.day);
        if (on_tau) y += truth.tau(s, obs.day);
        if (on_lambda) y += truth.lambda(s, obs.day);
        y += a1 * phi1[r] + a2 * phi2[r];
        y += sd_wn * z(eng);
        obs.values[r] = y;
      }
      out.score1.push_back(a1);
      out.score2.push_back(a2);
      rec.periods[p - 1].push_back(std::move(obs));
    }
  }
  return out;
}

}  // namespace

FunctionalCrossoverDataset generate_dataset(const SimConfig& config, LatentScores* latent) {
  config.validate();
  FunctionalCrossoverDataset ds;
  const int R = config.grid_size;
  ds.grid.resize(R);
  std::vector<double> phi1(R), phi2(R);
  for (int r = 0; r < R; ++r) {
    ds.grid[r] = static_cast<double>(r) / (R - 1);
    phi1[r] = sim_phi1(ds.grid[r]);
    phi2[r] = sim_phi2(ds.grid[r]);
  }
  const TrueSurfaces truth(config);
  std::vector<SubjectDraw> draws(config.n);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < config.n; ++i) draws[i] = draw_subject(config, i, ds.grid, phi1, phi2, truth);

  if (latent) {
    latent->score1.clear();
    latent->score2.clear();
  }
  ds.subjects.reserve(config.n);
  for (auto& d : draws) {
    if (latent) {
      latent->score1.insert(latent->score1.end(), d.score1.begin(), d.score1.end());
      latent->score2.insert(latent->score2.end(), d.score2.begin(), d.score2.end());
    }
    ds.subjects.push_back(std::move(d.record));
  }
  return ds;
}

}  // namespace prolific
