#include <cmath>

#include "doctest.h"
#include "prolific/errors.hpp"
#include "prolific/fpca.hpp"
#include "prolific/simulator.hpp"
#include "prolific/smoothing.hpp"

using namespace prolific;

namespace {

std::vector<double> unit_grid(int R) {
  std::vector<double> g(R);
  for (int r = 0; r < R; ++r) g[r] = static_cast<double>(r) / (R - 1);
  return g;
}

Eigen::MatrixXd rank_two(const std::vector<double>& grid, double nugget = 0.0) {
  const int R = static_cast<int>(grid.size());
  Eigen::VectorXd a(R), b(R);
  for (int r = 0; r < R; ++r) {
    a(r) = sim_phi1(grid[r]);
    b(r) = sim_phi2(grid[r]);
  }
  Eigen::MatrixXd m = 1.5 * a * a.transpose() + 0.8 * b * b.transpose();
  m.diagonal().array() += nugget;
  return m;
}

// Curves minus the true mean surface.
Eigen::MatrixXd true_residuals(int n, std::uint64_t seed, CurveTable* table = nullptr, LatentScores* latent = nullptr) {
  SimConfig c;
  c.n = n;
  c.seed = seed;
  auto t = flatten(generate_dataset(c, latent));
  TrueSurfaces truth(c);
  Eigen::MatrixXd res = t.values;
  for (int i = 0; i < t.rows(); ++i)
    for (int r = 0; r < res.cols(); ++r) res(i, r) -= truth.mu(t.grid[r], t.day[i]);
  if (table) *table = t;
  return res;
}

}  // namespace

TEST_CASE("quadrature weights") {
  auto g = unit_grid(11);
  auto t = quadrature_weights(g, Quadrature::Trapezoid);
  CHECK(t.sum() == doctest::Approx(1.0));
  CHECK(t(0) == doctest::Approx(0.05));
  CHECK(t(5) == doctest::Approx(0.1));
  auto m = quadrature_weights(g, Quadrature::RiemannMean);
  CHECK(m(0) == doctest::Approx(1.0 / 11));
  CHECK(m(10) == doctest::Approx(1.0 / 11));
}

TEST_CASE("pooled covariance") {
  CHECK(estimate_marginal_covariance(Eigen::MatrixXd::Zero(5, 7)).isZero());
  auto res = true_residuals(200, 21);
  auto cov = estimate_marginal_covariance(res);
  CHECK(cov.isApprox(cov.transpose(), 0.0));
  auto truth = rank_two(unit_grid(101));
  // subject-level scores make a single estimate noisy (sd ~0.2 on peak entries), so
  // the analytic oracle is compared against the average of independent estimates
  Eigen::MatrixXd avg = cov;
  const int reps = 10;
  for (int rep = 1; rep < reps; ++rep) avg += estimate_marginal_covariance(true_residuals(200, 21 + 100 * rep));
  avg /= reps;
  double sq = 0;
  for (int a = 0; a < 101; ++a)
    for (int b = 0; b < 101; ++b)
      if (a != b) sq += std::pow(avg(a, b) - truth(a, b), 2);
  CHECK(std::sqrt(sq / (101.0 * 100.0)) < 0.1);
  CHECK((avg.diagonal() - truth.diagonal()).mean() == doctest::Approx(0.25).epsilon(0.1));
  Eigen::MatrixXd twice(2 * res.rows(), res.cols());
  twice << res, res;
  CHECK((estimate_marginal_covariance(twice) - cov).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("rank-two eigensystem") {
  auto grid = unit_grid(101);
  auto eig = eigendecompose(rank_two(grid), grid, 0.9);
  REQUIRE(eig.K() == 2);
  CHECK(eig.eigenvalues(0) == doctest::Approx(1.5).epsilon(1e-6));
  CHECK(eig.eigenvalues(1) == doctest::Approx(0.8).epsilon(1e-6));
  double e1 = 0, e2 = 0;
  for (int r = 0; r < 101; ++r) {
    e1 = std::max(e1, std::abs(std::abs(eig.eigenfunctions(r, 0)) - std::abs(sim_phi1(grid[r]))));
    e2 = std::max(e2, std::abs(std::abs(eig.eigenfunctions(r, 1)) - std::abs(sim_phi2(grid[r]))));
  }
  CHECK(e1 < 1e-3);
  CHECK(e2 < 1e-3);
  CHECK(eigendecompose(rank_two(grid), grid, 1.0).K() == 2);
  CHECK(eigendecompose(rank_two(grid), grid, 0.6).K() == 1);
  CHECK_THROWS_AS(eigendecompose(Eigen::MatrixXd::Zero(101, 101), grid, 0.9), NumericalError);
}

TEST_CASE("eigensystem invariants") {
  auto res = true_residuals(40, 22);
  auto grid = unit_grid(101);
  auto cov = estimate_marginal_covariance(res);
  auto eig = eigendecompose(cov, grid, 0.99);
  const auto& w = eig.weights;
  Eigen::MatrixXd gram = eig.eigenfunctions.transpose() * w.asDiagonal() * eig.eigenfunctions;
  CHECK((gram - Eigen::MatrixXd::Identity(eig.K(), eig.K())).cwiseAbs().maxCoeff() < 1e-6);
  for (int k = 0; k < eig.K(); ++k) {
    Eigen::Index at;
    eig.eigenfunctions.col(k).cwiseAbs().maxCoeff(&at);
    CHECK(eig.eigenfunctions(at, k) > 0);
    CHECK(eig.eigenvalues(k) > 0);
    if (k) CHECK(eig.eigenvalues(k) <= eig.eigenvalues(k - 1));
  }
  double kept = eig.eigenvalues.sum();
  CHECK(kept >= 0.99 * eig.trace - 1e-12 * eig.trace);
  CHECK(kept - eig.eigenvalues(eig.K() - 1) < 0.99 * eig.trace);
  // scaling residuals
  auto scaled = eigendecompose(estimate_marginal_covariance(3.0 * res), grid, 0.99);
  CHECK(scaled.K() == eig.K());
  CHECK((scaled.eigenvalues - 9.0 * eig.eigenvalues).cwiseAbs().maxCoeff() < 1e-9 * scaled.eigenvalues(0));
  CHECK((scaled.eigenfunctions - eig.eigenfunctions).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("quasi projections") {
  auto grid = unit_grid(101);
  auto eig = eigendecompose(rank_two(grid), grid, 0.9);
  Eigen::MatrixXd own = eig.eigenfunctions.transpose();
  auto w = quasi_project(own, grid, eig);
  CHECK(w(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(std::abs(w(0, 1)) < 1e-6);
  CHECK(std::abs(w(1, 0)) < 1e-6);
  CHECK(quasi_project(Eigen::MatrixXd::Zero(3, 101), grid, eig).isZero());
  CHECK_THROWS_AS(quasi_project(Eigen::MatrixXd::Zero(3, 50), unit_grid(50), eig), ValidationError);

  // projecting generated curves recovers the latent scores up to quadrature noise
  CurveTable t;
  LatentScores latent;
  auto res = true_residuals(30, 23, &t, &latent);
  auto sc = quasi_project(res, grid, eig);
  double sign1 = eig.eigenfunctions(25, 0) > 0 ? 1.0 : -1.0;  // phi1 peaks at s = 0.25
  double sign2 = eig.eigenfunctions(0, 1) > 0 ? 1.0 : -1.0;   // phi2 peaks at s = 0
  double e1 = 0, e2 = 0;
  for (int i = 0; i < t.rows(); ++i) {
    e1 += std::pow(sign1 * sc(i, 0) - latent.score1[i], 2);
    e2 += std::pow(sign2 * sc(i, 1) - latent.score2[i], 2);
  }
  CHECK(std::sqrt(e1 / t.rows()) < 0.08);
  CHECK(std::sqrt(e2 / t.rows()) < 0.08);

  // Parseval with every positive direction
  auto full = eigendecompose(estimate_marginal_covariance(res), grid, 1.0);
  auto all = quasi_project(res, grid, full);
  auto qw = quadrature_weights(grid, Quadrature::Trapezoid);
  for (int i = 0; i < 20; ++i) {
    double energy = res.row(i).cwiseAbs2().dot(qw);
    CHECK(all.row(i).squaredNorm() <= energy + 1e-6);
  }
}

TEST_CASE("smoothing strips the nugget") {
  auto grid = unit_grid(101);
  auto raw = rank_two(grid, 0.25);
  auto sm = smooth_covariance(raw, grid, 0.1);
  auto truth = rank_two(grid);
  CHECK(sm.isApprox(sm.transpose()));
  CHECK((sm.diagonal() - truth.diagonal()).cwiseAbs().maxCoeff() < 0.1);
  auto eig = eigendecompose(sm, grid, 0.9);
  CHECK(eig.K() == 2);
  CHECK(eig.eigenvalues(0) == doctest::Approx(1.5).epsilon(0.02));
}

TEST_CASE("simulated data at PVE 0.90 gives two directions") {
  int smoothed_two = 0, raw_two = 0;
  const int reps = 100;
  for (int rep = 0; rep < reps; ++rep) {
    SimConfig c;
    c.n = 100;
    c.seed = 7000 + rep;
    auto t = flatten(generate_dataset(c));
    auto res = demean(t, fit_facm_mean(t));
    FpcaConfig fc;
    fc.pve = 0.90;
    raw_two += marginal_fpca(res, t.grid, fc).K() == 2;
    fc.smoothing = CovarianceSmoothing::LocalQuadratic;
    smoothed_two += marginal_fpca(res, t.grid, fc).K() == 2;
  }
  MESSAGE("K = 2 with the raw covariance in " << raw_two << " of " << reps << " replicates");
  CHECK(smoothed_two >= 95);
}
