#include <cmath>

#include "doctest.h"
#include "prolific/errors.hpp"
#include "prolific/simulator.hpp"
#include "prolific/smoothing.hpp"

using namespace prolific;

namespace {

CurveTable sim_table(int n, std::uint64_t seed, double delta = 0.0, double gamma = 0.0) {
  SimConfig c;
  c.n = n;
  c.seed = seed;
  c.delta = delta;
  c.gamma_rel = gamma;
  return flatten(generate_dataset(c));
}

double rms_tau(const MeanModelFit& f) {
  double s = 0;
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 50; ++j) s += std::pow(f.tau(i / 49.0, j / 49.0), 2);
  return std::sqrt(s / 2500);
}

}  // namespace

TEST_CASE("noiseless mean surface is recovered") {
  auto t = sim_table(30, 4);
  SimConfig c;
  TrueSurfaces truth(c);
  for (int i = 0; i < t.rows(); ++i)
    for (int r = 0; r < static_cast<int>(t.grid.size()); ++r) t.values(i, r) = truth.mu(t.grid[r], t.day[i]);
  for (auto crit : {SelectionCriterion::Gcv, SelectionCriterion::SubjectFoldCv}) {
    SmoothConfig sc;
    sc.criterion = crit;
    auto f = fit_facm_mean(t, sc);
    double err = 0, tau = 0;
    for (int i = 0; i < 50; ++i)
      for (int j = 0; j < 50; ++j) {
        double s = i / 49.0, d = j / 49.0;
        err = std::max(err, std::abs(f.mu(s, d) - truth.mu(s, d)));
        tau = std::max(tau, std::abs(f.tau(s, d)));
      }
    CHECK(err < 1e-2);
    CHECK(tau < 1e-2);
  }
}

TEST_CASE("constant shift moves only the mean surface") {
  auto t = sim_table(20, 8, 1.0, 0.5);
  auto f0 = fit_facm_mean(t);
  t.values.array() += 2.5;
  auto f1 = fit_facm_mean(t);
  CHECK(f0.smoothing_params() == f1.smoothing_params());
  for (double s : {0.0, 0.3, 0.9})
    for (double d : {0.1, 0.5, 1.0}) {
      CHECK(f1.mu(s, d) - f0.mu(s, d) == doctest::Approx(2.5).epsilon(1e-6));
      CHECK(std::abs(f1.tau(s, d) - f0.tau(s, d)) < 1e-6);
      CHECK(std::abs(f1.lambda(s, d) - f0.lambda(s, d)) < 1e-6);
    }
}

TEST_CASE("demeaning") {
  auto t = sim_table(20, 9);
  auto f = fit_facm_mean(t);
  auto res = demean(t, f);
  CHECK(std::abs(res.mean()) < 1e-8);
  CurveTable own = t;
  own.values = f.fitted(t);
  CHECK(demean(own, f).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(f.rss() == doctest::Approx(res.squaredNorm()).epsilon(1e-8));
}

TEST_CASE("residual sum of squares grows with the penalty") {
  auto t = sim_table(20, 10, 1.0, 0.5);
  double prev = -1.0;
  for (double lam : {1e-3, 1e-1, 1e1}) {
    SmoothConfig sc;
    sc.fixed_lambdas = {lam, 0.1, 0.1};
    double rss = fit_facm_mean(t, sc).rss();
    CHECK(rss >= prev * (1 - 1e-12));
    prev = rss;
  }
}

TEST_CASE("selection is deterministic and reported") {
  auto t = sim_table(20, 11, 0.5, 0.5);
  auto a = fit_facm_mean(t), b = fit_facm_mean(t);
  CHECK(a.smoothing_params() == b.smoothing_params());
  CHECK(a.smoothing_params().size() == 3);
  CHECK(a.edf() > 0);
  CHECK(std::isfinite(a.criterion()));
  SmoothConfig bad;
  bad.fixed_lambdas = {1.0};
  CHECK_THROWS_AS(fit_facm_mean(t, bad), ConfigError);
}

TEST_CASE("a block with no indicator is dropped") {
  SimConfig c;
  c.n = 10;
  c.seed = 12;
  auto ds = generate_dataset(c);
  for (auto& s : ds.subjects) {
    s.periods[1].clear();
    s.periods[3].clear();
  }
  auto t = flatten(ds);
  auto f = fit_facm_mean(t);
  CHECK_FALSE(f.blocks()[2].active);
  CHECK(f.lambda(0.4, 0.2) == 0.0);
  CHECK(f.blocks()[1].active);
}

TEST_CASE("covariate effect is recovered") {
  auto t = sim_table(30, 13);
  t.covariates.resize(t.rows(), 1);
  for (int i = 0; i < t.rows(); ++i) {
    double c = (t.subject[i] % 5) - 2.0;
    t.covariates(i, 0) = c;
    for (int r = 0; r < static_cast<int>(t.grid.size()); ++r) t.values(i, r) += c * t.grid[r];
  }
  auto f = fit_facm_mean(t);
  for (double s : {0.2, 0.5, 0.8}) CHECK(f.beta(0, s) == doctest::Approx(s).epsilon(0.15));
}

TEST_CASE("null treatment estimate shrinks toward zero") {
  double total = 0.0;
  const int reps = 50;
  for (int rep = 0; rep < reps; ++rep) total += rms_tau(fit_facm_mean(sim_table(100, 2000 + rep)));
  MESSAGE("mean RMS of the treatment surface: " << total / reps);
  CHECK(total / reps < 0.1);
}

TEST_CASE("residual variance budget") {
  auto t = sim_table(200, 14);
  auto res = demean(t, fit_facm_mean(t));
  // trapezoid integral of the pooled variance
  const int R = static_cast<int>(t.grid.size());
  double v = 0;
  for (int r = 0; r < R; ++r) {
    double w = (r == 0 || r == R - 1) ? 0.5 / (R - 1) : 1.0 / (R - 1);
    v += w * res.col(r).squaredNorm() / t.rows();
  }
  CHECK(std::abs(v / 2.55 - 1.0) < 0.05);
}
