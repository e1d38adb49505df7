#include <cmath>

#include <omp.h>

#include "doctest.h"
#include "prolific/adzc.hpp"
#include "prolific/errors.hpp"
#include "prolific/simulator.hpp"

using namespace prolific;

namespace {

Pipeline pipeline(int n, double delta, double gamma, std::uint64_t seed) {
  SimConfig s;
  s.n = n;
  s.delta = delta;
  s.gamma_rel = gamma;
  s.seed = seed;
  ProlificConfig c;
  c.fpca.pve = 0.9;
  return prepare_pipeline(generate_dataset(s), c);
}

// BLUP of the treatment curve through the marginal covariance
// V = I + sum_c ratio_c Z_c Z_c', evaluated at `s`.
Eigen::VectorXd blup_tau(const ProjectedLmmProblem& p, const Ratios& ratios, bool with_lambda,
                         const std::vector<double>& s) {
  const int N = p.N();
  Eigen::MatrixXd X(N, p.X_b.cols() + p.X_tau.cols() + (with_lambda ? p.X_lambda.cols() : 0));
  if (with_lambda)
    X << p.X_b, p.X_tau, p.X_lambda;
  else
    X << p.X_b, p.X_tau;
  Eigen::MatrixXd V = Eigen::MatrixXd::Identity(N, N);
  for (int c = 0; c < 3; ++c) {
    if (c == kLambda && !with_lambda) continue;
    V += ratios[c] * p.Z(c) * p.Z(c).transpose();
  }
  Eigen::LDLT<Eigen::MatrixXd> vl(V);
  Eigen::MatrixXd ViX = vl.solve(X);
  Eigen::VectorXd beta = (X.transpose() * ViX).ldlt().solve(ViX.transpose() * p.y);
  Eigen::VectorXd r = vl.solve(p.y - X * beta);
  Eigen::VectorXd b = ratios[kTau] * p.Z_tau.transpose() * r;
  Eigen::VectorXd out(s.size());
  const int h = p.h_tau;
  for (std::size_t g = 0; g < s.size(); ++g) {
    double v = 0.0;
    for (int e = 0; e <= h; ++e) v += beta(p.X_b.cols() + e) * std::pow(s[g], e);
    for (std::size_t q = 0; q < p.knots.size(); ++q) {
      double t = s[g] - p.knots[q];
      v += b(q) * (t > 0 ? std::pow(t, h) : 0.0);
    }
    out(g) = v;
  }
  return out;
}

}  // namespace

TEST_CASE("treatment estimate matches the marginal-covariance BLUP") {
  auto pipe = pipeline(20, 1.0, 0.5, 12);
  auto& layer = pipe.layers[0];
  AdzcOptions opt;
  opt.grid = 41;
  std::vector<double> s(opt.grid);
  for (int g = 0; g < opt.grid; ++g) s[g] = g / 40.0;
  for (bool with : {true, false}) {
    auto res = run_adzc(layer, with, opt);
    Ratios r = with ? layer.full_fit.ratios : layer.reduced().ratios;
    auto oracle = blup_tau(layer.whitened, r, with, s);
    double scale = std::max(1.0, oracle.cwiseAbs().maxCoeff());
    CHECK((res.tau_hat - oracle).cwiseAbs().maxCoeff() / scale < 1e-6);
    // trapezoid L2 norm
    double l2 = 0.0;
    for (int g = 0; g + 1 < opt.grid; ++g)
      l2 += 0.5 * (s[g + 1] - s[g]) * (res.tau_hat(g) * res.tau_hat(g) + res.tau_hat(g + 1) * res.tau_hat(g + 1));
    CHECK(res.statistic == doctest::Approx(l2).epsilon(1e-10));
  }
}

TEST_CASE("mixture weights and p-values") {
  auto pipe = pipeline(24, 0.0, 0.0, 3);
  AdzcOptions opt;
  opt.mixture_draws = 4000;
  auto res = run_adzc(pipe.layers[0], true, opt);
  CHECK(res.weights.size() > 0);
  CHECK(res.weights.minCoeff() > 0.0);
  CHECK(res.p_value > 0.0);
  CHECK(res.p_value <= 1.0);
  CHECK(res.statistic >= 0.0);
  auto again = run_adzc(pipe.layers[0], true, opt);
  CHECK(again.p_value == res.p_value);
}

TEST_CASE("large treatment effect gives small p-values in both modes") {
  auto pipe = pipeline(40, 3.0, 0.0, 5);
  AdzcOptions opt;
  opt.B = 200;
  CHECK(run_adzc(pipe.layers[0], false, opt).p_value < 0.01);
  opt.mode = AdzcMode::Bootstrap;
  CHECK(run_adzc(pipe.layers[0], false, opt).p_value < 0.01);
}

TEST_CASE("bootstrap is thread independent") {
  auto pipe = pipeline(20, 0.5, 0.0, 9);
  AdzcOptions opt;
  opt.mode = AdzcMode::Bootstrap;
  opt.B = 150;
  int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  auto a = run_adzc(pipe.layers[0], true, opt);
  omp_set_num_threads(4);
  auto b = run_adzc(pipe.layers[0], true, opt);
  omp_set_num_threads(saved);
  CHECK(a.p_value == b.p_value);
  CHECK(a.p_value >= 1.0 / 151);
}

TEST_CASE("option checks") {
  auto pipe = pipeline(16, 0.0, 0.0, 2);
  AdzcOptions opt;
  opt.mode = AdzcMode::Bootstrap;
  opt.B = 99;
  CHECK_THROWS_AS(run_adzc(pipe.layers[0], true, opt), ConfigError);
  opt.mode = AdzcMode::ChisqMixture;
  opt.grid = 1;
  CHECK_THROWS_AS(run_adzc(pipe.layers[0], true, opt), ConfigError);
}
