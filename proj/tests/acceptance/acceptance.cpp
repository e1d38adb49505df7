// Acceptance run: one PASS/FAIL line per criterion. Simulation cells are
// cached under the cache directory and reused on later runs.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdarg>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <boost/math/distributions/fisher_f.hpp>

#include "../unit/support.hpp"
#include "prolific/harness.hpp"
#include "prolific/null_sampler.hpp"

using namespace prolific;
using namespace testing_support;

namespace {

struct Line {
  int id;
  bool pass;
};
std::vector<Line> g_lines;

void report(int id, bool pass, const std::string& text) {
  g_lines.push_back({id, pass});
  std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", id, text.c_str());
  std::fflush(stdout);
}

void extra(bool pass, const std::string& text) {
  g_lines.push_back({11, pass});
  std::printf("[%s] extra: %s\n", pass ? "PASS" : "FAIL", text.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

std::string g_cache = "acceptance_runs";

ExperimentConfig base_config(const std::string& experiment, const std::string& dir, int n, int reps) {
  KeyValueConfig kv;
  kv.set("sim.n", std::to_string(n));
  kv.set("reps", std::to_string(reps));
  kv.set("cov_smoothing", "local_quadratic");
  kv.set("output_dir", g_cache + "/" + dir);
  kv.set("quiet", "1");
  if (experiment == "power") kv.set("delta_grid", "1");
  return experiment_config_from(kv, experiment);
}

Progress progress(const std::string& label) {
  auto t0 = std::make_shared<std::chrono::steady_clock::time_point>(std::chrono::steady_clock::now());
  auto shown = std::make_shared<bool>(false);
  return [label, t0, shown](int done, int total) {
    if (done % 25 != 0 && done != total) return;
    double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - *t0).count();
    if (s < 1.0 && !*shown) return;  // cached cells stay quiet
    *shown = true;
    std::fprintf(stderr, "\r  %s: %d/%d (%.0f s)", label.c_str(), done, total, s);
    if (done == total) std::fprintf(stderr, "\n");
  };
}

struct Rate {
  double p = NAN, se = NAN;
  int reps = 0;
};

Rate rate(const std::vector<ReplicateRecord>& recs, Method m, double alpha, double alpha1) {
  Rate r;
  auto [p, se] = rejection_rate(recs, m, alpha, alpha1, &r.reps);
  r.p = p;
  r.se = se;
  return r;
}

int failures(const std::vector<ReplicateRecord>& recs) {
  int f = 0;
  for (const auto& r : recs) f += r.ok ? 0 : 1;
  return f;
}

// ---------------------------------------------------------------- 1, 2, 3, 5, 9

void size_criteria() {
  auto cfg = base_config("size", "size_n50", 50, 1000);
  cfg.alphas = {0.01, 0.05, 0.10};
  cfg.alpha1s = {0.05, 0.10};
  cfg.methods = {Method::Prolific, Method::AdzcChisq, Method::AdzcBoot};
  cfg.adzc_reps = 500;
  cfg.boot_B = 500;
  auto recs = run_cell(cfg, 50, 0.0, 0.0, progress("size n=50"));

  Rate s1 = rate(recs, Method::Prolific, 0.05, 0.10);
  report(1, s1.p >= 0.035 && s1.p <= 0.075,
         fmt("size n=50 alpha=0.05 alpha1=0.10: %.4f (MC SE %.4f, %d reps, %d failed) in [0.035, 0.075]", s1.p, s1.se,
             s1.reps, failures(recs)));

  {
    // per-direction rejections at alpha/K on the first 500 null replicates
    std::string text = "n=50 null, per-direction rejection at 0.05/K:";
    bool ok = true;
    for (int k = 0; k < 2; ++k) {
      int used = 0, rej = 0;
      double level = 0.0;
      for (const auto& r : recs) {
        if (r.rep >= 500 || !r.ok || r.K() <= k) continue;
        const auto& l = r.layers[k];
        auto rec = two_stage_decision(k, l.s1_stat, l.s1_p, l.s2a_stat, l.s2a_p, l.s2b_stat, l.s2b_p, 0.10 / r.K());
        ++used;
        rej += rec.stage2_p < 0.05 / r.K();
        level += 0.05 / r.K();
      }
      if (used == 0) continue;
      double p = static_cast<double>(rej) / used, nominal = level / used;
      double se = std::sqrt(nominal * (1 - nominal) / used);
      ok = ok && p <= nominal + 2 * se;
      text += fmt(" k=%d %.4f (%d reps, bound %.4f)", k + 1, p, used, nominal + 2 * se);
    }
    extra(ok, text);
  }

  Rate s05 = rate(recs, Method::Prolific, 0.05, 0.05);
  int discordant = 0;
  for (const auto& r : recs) {
    auto a = replicate_rejects(r, Method::Prolific, 0.05, 0.05);
    auto b = replicate_rejects(r, Method::Prolific, 0.05, 0.10);
    if (a && b && *a != *b) ++discordant;
  }
  double pooled_p = 0.5 * (s05.p + s1.p);
  double pooled_se = std::sqrt(2.0 * pooled_p * (1.0 - pooled_p) / s1.reps);
  report(3, std::abs(s05.p - s1.p) <= 2.0 * pooled_se,
         fmt("n=50 alpha=0.05: size(alpha1=0.05) = %.4f, size(alpha1=0.10) = %.4f, |diff| %.4f <= 2 x pooled SE "
             "%.4f (%d discordant replicates)",
             s05.p, s1.p, std::abs(s05.p - s1.p), 2.0 * pooled_se, discordant));

  Rate chisq = rate(recs, Method::AdzcChisq, 0.05, 0.10);
  Rate boot = rate(recs, Method::AdzcBoot, 0.05, 0.10);
  report(5, chisq.p >= 0.12 && boot.p <= 0.04,
         fmt("Ad-ZC n=50 alpha=0.05: chi-square mixture size %.4f (SE %.4f, want >= 0.12), bootstrap size %.4f "
             "(SE %.4f, want <= 0.04), %d reps, B=500",
             chisq.p, chisq.se, boot.p, boot.se, chisq.reps));

  // Stage-1 statistics of the first 200 null datasets against their sampled nulls.
  std::vector<double> stats, nulls;
  int used = 0;
  for (const auto& r : recs) {
    if (used == 200) break;
    if (r.rep >= 200 || !r.ok) continue;
    ++used;
    for (const auto& l : r.layers) {
      stats.push_back(l.s1_stat);
      nulls.insert(nulls.end(), l.s1_null_quantiles.begin(), l.s1_null_quantiles.end());
    }
  }
  auto quant = [](std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    double pos = q * (v.size() - 1);
    auto i = static_cast<std::size_t>(pos);
    double f = pos - i;
    return i + 1 < v.size() ? (1 - f) * v[i] + f * v[i + 1] : v.back();
  };
  double e90 = quant(stats, 0.90), e95 = quant(stats, 0.95);
  double n90 = quant(nulls, 0.90), n95 = quant(nulls, 0.95);
  double r90 = std::abs(e90 / n90 - 1), r95 = std::abs(e95 / n95 - 1);
  report(9, r90 <= 0.10 && r95 <= 0.10,
         fmt("stage-1 on %d null datasets (%zu directions): q90 %.4f vs sampler %.4f (%.1f%%), q95 %.4f vs sampler "
             "%.4f (%.1f%%), within 10%%",
             used, stats.size(), e90, n90, 100 * r90, e95, n95, 100 * r95));

  auto cfg100 = base_config("size", "size_n100", 100, 1000);
  auto recs100 = run_cell(cfg100, 100, 0.0, 0.0, progress("size n=100"));
  Rate s2 = rate(recs100, Method::Prolific, 0.05, 0.10);
  report(2, s2.p >= 0.030 && s2.p <= 0.070,
         fmt("size n=100 alpha=0.05 alpha1=0.10: %.4f (MC SE %.4f, %d reps, %d failed) in [0.030, 0.070]", s2.p, s2.se,
             s2.reps, failures(recs100)));
}

// ---------------------------------------------------------------- 4

// Without carryover, stage 1 should reject at most at alpha1 and the reduced
// branch should carry nearly every direction.
void branch_check(const std::vector<ReplicateRecord>& recs, double delta) {
  int used = 0, any = 0, layers = 0, reduced = 0;
  for (const auto& r : recs) {
    if (!r.ok) continue;
    ++used;
    bool hit = false;
    for (const auto& l : r.layers) {
      ++layers;
      bool carry = l.s1_p < 0.10 / r.K();
      hit = hit || carry;
      reduced += !carry;
    }
    any += hit;
  }
  double p = static_cast<double>(any) / used, se1 = std::sqrt(0.1 * 0.9 / used);
  double q = static_cast<double>(reduced) / layers, se2 = std::sqrt(0.1 * 0.9 / layers);
  extra(p <= 0.10 + 2 * se1 && q >= 0.90 - 2 * se2,
        fmt("n=100 delta=%.2f gamma_rel=0: stage-1 rejects in %.4f of replicates (bound %.4f), reduced branch in "
            "%.4f of directions (want >= %.4f)",
            delta, p, 0.10 + 2 * se1, q, 0.90 - 2 * se2));
}

const std::vector<double> kDeltaGrid = {0.0, 0.03, 0.06, 0.10};

void power_criterion() {
  auto zero = base_config("power", "size_n100", 100, 1000);
  auto zrecs = run_cell(zero, 100, 0.0, 0.0, progress("power delta=0"));
  Rate z = rate(zrecs, Method::Prolific, 0.05, 0.10);
  bool ok = z.p >= 0.035 && z.p <= 0.075;
  std::string text = fmt("n=100: power(delta=0) %.4f (SE %.4f, %d reps) in [0.035, 0.075]", z.p, z.se, z.reps);

  auto cfg = base_config("power", "power_n100", 100, 200);
  cfg.methods = {Method::Prolific, Method::AdzcBoot};
  cfg.boot_B = 500;
  for (double g : {0.0, 0.5}) {
    std::vector<Rate> pro, boot;
    for (double d : kDeltaGrid) {
      if (d == 0.0) {
        pro.push_back(z);
        boot.push_back({});
        continue;
      }
      auto recs = run_cell(cfg, 100, d, g, progress(fmt("power gamma=%.1f delta=%.2f", g, d)));
      pro.push_back(rate(recs, Method::Prolific, 0.05, 0.10));
      boot.push_back(rate(recs, Method::AdzcBoot, 0.05, 0.10));
      if (g == 0.0) branch_check(recs, d);
    }
    text += fmt("; gamma_rel=%.1f power", g);
    bool mono = true, beats = true;
    for (std::size_t i = 0; i < kDeltaGrid.size(); ++i) {
      text += fmt(" %.2f:%.3f", kDeltaGrid[i], pro[i].p);
      if (i > 0 && pro[i].p < pro[i - 1].p - 2 * std::hypot(pro[i].se, pro[i - 1].se)) mono = false;
      if (kDeltaGrid[i] > 0) {
        text += fmt("/adzc %.3f", boot[i].p);
        if (pro[i].p < boot[i].p - 2 * std::hypot(pro[i].se, boot[i].se)) beats = false;
      }
    }
    bool top = pro.back().p >= 0.9;
    text += fmt(" (nondecreasing %s, top >= 0.9 %s, >= Ad-ZC bootstrap %s)", mono ? "yes" : "no",
                top ? "yes" : "no", beats ? "yes" : "no");
    ok = ok && mono && top && beats;
  }
  report(4, ok, text);
}

// ---------------------------------------------------------------- 6

ProjectedLmmProblem random_problem(std::mt19937_64& g, int max_n) {
  std::uniform_int_distribution<int> subj(2, 4), per(1, 7), knots(2, 4);
  int s = subj(g);
  int p = std::min(per(g), max_n / (4 * s));
  return build_design(random_layer(g, s, std::max(1, p)), {}, even_knots(knots(g)));
}

Ratios random_ratios(std::mt19937_64& g) {
  std::uniform_real_distribution<double> e(-3.0, 3.0);
  return {std::pow(10.0, e(g)), std::pow(10.0, e(g)), std::pow(10.0, e(g))};
}

void identity_criterion() {
  auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 g(606);
  double worst_wood = 0.0, worst_proj = 0.0, worst_qrss = 0.0, worst_xi = 0.0;
  int max_n = 0;
  for (int inst = 0; inst < 50; ++inst) {
    auto p = random_problem(g, 60);
    max_n = std::max(max_n, p.N());
    CrossProducts cp(p);
    Ratios r = random_ratios(g);
    Eigen::MatrixXd V = dense_v(p, r);

    // low-rank products against the dense inverse
    std::vector<int> cols(cp.y_column() + 1);
    std::iota(cols.begin(), cols.end(), 0);
    auto gls = gls_products(cp, r, cols);
    Eigen::MatrixXd A(p.N(), cols.size());
    A << p.X_b, p.X_tau, p.X_lambda, p.Z_mu, p.Z_tau, p.Z_lambda, p.y;
    worst_wood = std::max(worst_wood, max_rel_diff(gls.S, A.transpose() * V.llt().solve(A)));

    // projector through an orthogonal complement of the fixed design
    Eigen::MatrixXd X = fixed_design(p, true, true);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(X);
    Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(p.N(), p.N());
    Eigen::MatrixXd G = Q.rightCols(p.N() - X.cols()) * random_matrix(g, p.N() - X.cols(), p.N() - X.cols());
    Eigen::MatrixXd Pg = G * (G.transpose() * V * G).llt().solve(G.transpose());
    Eigen::MatrixXd Pd = dense_projector(V, X);
    worst_proj = std::max(worst_proj, max_rel_diff(Pd, Pg));

    // library forms of the same projector
    double want = p.y.dot(Pg * p.y);
    worst_qrss = std::max(worst_qrss, std::abs(compute_qrss(cp, r, {true, true}) - want) / std::abs(want));
    for (int c : {kTau, kLambda}) {
      Eigen::MatrixXd M = p.Z(c).transpose() * Pg * p.Z(c);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (M + M.transpose()));
      Eigen::VectorXd got = xi_eigenvalues(cp, c, r, {true, true});
      Eigen::VectorXd ref = es.eigenvalues().cwiseMax(0.0);
      worst_xi = std::max(worst_xi, (got - ref).cwiseAbs().maxCoeff() / std::max(1.0, ref.maxCoeff()));
    }
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  double worst = std::max({worst_wood, worst_proj, worst_qrss, worst_xi});
  report(6, worst <= 1e-8,
         fmt("50 instances, N <= %d: Woodbury products %.2e, projector identity %.2e, residual quadratic form "
             "%.2e, xi eigenvalues %.2e (relative, tol 1e-8), %.2f s",
             max_n, worst_wood, worst_proj, worst_qrss, worst_xi, secs));
}

// ---------------------------------------------------------------- 7

// Layer with subject, treatment and carryover curve effects so that every
// ratio has something to estimate.
ProjectedLmmProblem signal_problem(std::mt19937_64& g, int subjects, int per_period, int knots) {
  auto layer = random_layer(g, subjects, per_period);
  std::normal_distribution<double> z(0.0, 1.0);
  double a = z(g), b = z(g), c = z(g), d = z(g);
  for (Eigen::Index r = 0; r < layer.score.size(); ++r) {
    double t = layer.day[r];
    layer.score(r) += 0.5 * std::sin(6 * t + a) + (layer.i_tau[r] ? 0.8 * std::cos(5 * t + b) + c * t : 0.0) +
                      (layer.i_lambda[r] ? 0.6 * std::sin(4 * t + d) : 0.0);
  }
  return build_design(layer, {}, even_knots(knots));
}

double grid_refine(const CrossProducts& cp, int dims, int points, int rounds) {
  // log10 ratios on [-5, 5] with an extra exact-zero level per axis
  std::vector<double> lo(dims, -5.0), hi(dims, 5.0);
  double best = INFINITY;
  std::vector<double> best_x(dims, 0.0);
  for (int round = 0; round < rounds; ++round) {
    std::vector<std::vector<double>> axes(dims);
    for (int k = 0; k < dims; ++k) {
      if (round == 0) axes[k].push_back(-INFINITY);
      for (int i = 0; i < points; ++i) axes[k].push_back(lo[k] + (hi[k] - lo[k]) * i / (points - 1));
    }
    std::vector<std::size_t> idx(dims, 0);
    while (true) {
      Ratios r{0, 0, 0};
      std::vector<double> x(dims);
      for (int k = 0; k < dims; ++k) {
        x[k] = axes[k][idx[k]];
        r[k] = std::isinf(x[k]) ? 0.0 : std::pow(10.0, x[k]);
      }
      double v = reml_pieces(cp, r, {true, true}).objective;
      if (v < best) {
        best = v;
        best_x = x;
      }
      int k = 0;
      while (k < dims && ++idx[k] == axes[k].size()) idx[k++] = 0;
      if (k == dims) break;
    }
    for (int k = 0; k < dims; ++k) {
      double step = (hi[k] - lo[k]) / (points - 1);
      double centre = std::isinf(best_x[k]) ? lo[k] : best_x[k];
      lo[k] = centre - 2 * step;
      hi[k] = centre + 2 * step;
    }
  }
  return best;
}

void reml_criterion() {
  auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 g(707);
  double worst1 = -INFINITY;
  int boundary = 0;
  for (int inst = 0; inst < 20; ++inst) {
    auto p = signal_problem(g, 5, 3, 5);  // N = 60, Q = 5
    CrossProducts cp(p);
    auto fit = fit_reml(cp, {true, false, false}, {true, true});
    double best = reml_pieces(cp, {0, 0, 0}, {true, true}).objective;
    for (int i = 0; i < 2000; ++i) {
      double r = std::pow(10.0, -6.0 + 12.0 * i / 1999.0);
      best = std::min(best, reml_pieces(cp, {r, 0, 0}, {true, true}).objective);
    }
    boundary += fit.ratios[kMu] == 0.0;
    worst1 = std::max(worst1, fit.objective_value - best);
  }
  double worst3 = -INFINITY;
  for (int inst = 0; inst < 5; ++inst) {
    auto p = signal_problem(g, 10, 5, 6);  // N = 200
    CrossProducts cp(p);
    auto fit = fit_reml(cp, {true, true, true}, {true, true});
    double grid = grid_refine(cp, 3, 20, 4);
    worst3 = std::max(worst3, fit.objective_value - grid);
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report(7, worst1 <= 1e-3 && worst3 <= 1e-2,
         fmt("1-ratio (20 problems, N=60, Q=5, %d at zero): max(simplex - 2000-point grid) = %.2e (tol 1e-3); "
             "3-ratio (5 problems, N=200): max(simplex - refined 20^3 grid) = %.2e (tol 1e-2), %.1f s",
             boundary, worst1, worst3, secs));
}

// ---------------------------------------------------------------- 8

void null_criterion() {
  NullDims dims{300, 10, 6, 1};
  NullStructures st;
  st.xi = Eigen::VectorXd::Zero(dims.q_tested);
  NullOptions opt;
  opt.nsim = 10000;
  opt.seed = 808;
  auto sample = sample_null(Stage::S1, st, dims, opt);
  const double d1 = dims.h_tested + 1, d2 = dims.N - dims.rank;
  boost::math::fisher_f_distribution<double> f(d1, d2);
  const double scale = dims.N * d1 / d2;
  double ks = 0.0;
  const double n = sample.draws.size();
  for (std::size_t i = 0; i < sample.draws.size(); ++i) {
    double c = boost::math::cdf(f, sample.draws[i] / scale);
    ks = std::max({ks, std::abs(c - i / n), std::abs((i + 1) / n - c)});
  }
  report(8, ks < 0.02, fmt("xi = 0, 10^4 draws vs scaled F(%g, %g): KS distance %.4f < 0.02", d1, d2, ks));
}

// ---------------------------------------------------------------- extra

void carryover_detection() {
  auto cfg = base_config("power", "carryover_n100", 100, 100);
  auto recs = run_cell(cfg, 100, 2.0, 1.0, progress("carryover"));
  int hit = 0, used = 0;
  for (const auto& r : recs) {
    if (!r.ok || r.layers.empty()) continue;
    ++used;
    const auto& l = r.layers[0];
    hit += l.s1_stat > l.s1_null_quantiles[l.s1_null_quantiles.size() * 99 / 100];
  }
  double frac = used ? static_cast<double>(hit) / used : 0.0;
  extra(frac >= 0.9, fmt("n=100 delta=2 gamma_rel=1: stage-1 statistic above its null 99th percentile in %d/%d "
                         "(%.2f, want >= 0.90)",
                         hit, used, frac));
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> expected_fail;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--cache") && i + 1 < argc) g_cache = argv[++i];
    else if (!std::strcmp(argv[i], "--expect-fail") && i + 1 < argc) expected_fail.insert(std::atoi(argv[++i]));
    else if (!std::strcmp(argv[i], "--only") && i + 1 < argc) only.insert(std::atoi(argv[++i]));
    else {
      std::fprintf(stderr, "usage: %s [--cache DIR] [--only N]... [--expect-fail N]...\n", argv[0]);
      return 2;
    }
  }
  auto want = [&](std::initializer_list<int> ids) {
    if (only.empty()) return true;
    for (int id : ids)
      if (only.count(id)) return true;
    return false;
  };
  if (want({6})) identity_criterion();
  if (want({7})) reml_criterion();
  if (want({8})) null_criterion();
  if (want({1, 2, 3, 5, 9})) size_criteria();
  if (want({4})) power_criterion();
  if (want({11})) carryover_detection();
  if (want({10}))
    std::printf("[N/A ] criterion 10: real-data p-values not reproducible (dataset not public); the analyze path is "
                "checked on simulated CSVs by criteria 1-4 and the CLI schema test\n");

  int unexpected = 0;
  for (const auto& l : g_lines) {
    if (!l.pass && !expected_fail.count(l.id)) ++unexpected;
    if (l.pass && expected_fail.count(l.id))
      std::printf("note: criterion %d was expected to fail but passed\n", l.id);
  }
  std::printf("acceptance: %d lines, %d failed, %d unexpected failures\n", static_cast<int>(g_lines.size()),
              static_cast<int>(std::count_if(g_lines.begin(), g_lines.end(), [](const Line& l) { return !l.pass; })),
              unexpected);
  return unexpected ? 1 : 0;
}
