#include "prolific/null_sampler.hpp"

#include <algorithm>
#include <cmath>

#include "prolific/errors.hpp"
#include "prolific/nelder_mead.hpp"

namespace prolific {

namespace {
constexpr double kLogLower = -20.0;
constexpr double kLogUpper = 12.0;
constexpr double kZeroFloor = 1e-8;

double from_log(double x) {
  double v = std::exp(std::clamp(x, kLogLower, kLogUpper));
  return v < kZeroFloor ? 0.0 : v;
}
}  // namespace

NullDraw draw_null_pieces(Engine& engine, const NullDims& dims) {
  NullDraw d;
  std::normal_distribution<double> z(0.0, 1.0);
  d.u.resize(dims.q_tested);
  for (int s = 0; s < dims.q_tested; ++s) d.u(s) = z(engine);
  d.chi_rest = draw_chi_square(engine, dims.N - dims.rank - dims.q_tested);
  d.chi_fixed = draw_chi_square(engine, dims.h_tested + 1);
  return d;
}

double null_objective(double ratio, const Eigen::VectorXd& xi, const NullDraw& d, const NullDims& dims) {
  double rss = d.chi_rest, logdet = 0.0;
  for (Eigen::Index s = 0; s < xi.size(); ++s) {
    double f = 1.0 + ratio * xi(s);
    rss += d.u(s) * d.u(s) / f;
    logdet += std::log(f);
  }
  return (dims.N - dims.rank) * std::log(rss) + logdet;
}

double null_statistic(double ratio, const Eigen::VectorXd& xi, const NullDraw& d, const NullDims& dims) {
  double num = d.chi_fixed, den = d.chi_rest;
  for (Eigen::Index s = 0; s < xi.size(); ++s) {
    double g = ratio * xi(s);
    double u2 = d.u(s) * d.u(s);
    num += g / (1.0 + g) * u2;
    den += u2 / (1.0 + g);
  }
  return num / (den / dims.N);
}

InnerResult minimize_null_objective(const Eigen::VectorXd& xi, const NullDraw& d, const NullDims& dims,
                                    const NullOptions& options) {
  InnerResult best;
  best.ratio = 0.0;
  best.value = null_objective(0.0, xi, d, dims);
  if (xi.size() == 0 || xi.maxCoeff() <= 0.0) return best;
  SimplexOptions so;
  so.f_tol = options.f_tol;
  so.x_tol = INFINITY;
  so.step = 2.0;
  so.lower = kLogLower;
  so.upper = kLogUpper;
  so.max_evals = 500;
  bool any = false;
  for (double s : options.starts) {
    auto res = nelder_mead(
        [&](const std::vector<double>& x) { return null_objective(from_log(x[0]), xi, d, dims); }, {std::log(s)},
        so);
    any |= res.converged;
    if (res.value < best.value) {
      best.value = res.value;
      best.ratio = from_log(res.x[0]);
    }
  }
  best.converged = any;
  return best;
}

namespace {

struct ProfiledResult {
  double statistic = 0.0;
  bool converged = true;
};

ProfiledResult profiled_draw(const NullStructures& st, const NullDraw& d, const NullDims& dims,
                             const NullOptions& options) {
  const std::size_t m = st.nuisance_hat.size();
  auto ratios_of = [&](const std::vector<double>& x) {
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) r[i] = from_log(x[i]);
    return r;
  };
  auto objective = [&](const std::vector<double>& r) {
    std::vector<double> nu(r.begin(), r.begin() + m);
    Eigen::VectorXd xi = st.xi_at(nu);
    double v = null_objective(r[m], xi, d, dims);
    if (st.omega_at) {
      Eigen::VectorXd om = st.omega_at(nu);
      for (Eigen::Index s = 0; s < om.size(); ++s) v += std::log1p(om(s));
    }
    return v;
  };
  std::vector<double> best_r(m + 1, 0.0);
  double best = objective(best_r);
  SimplexOptions so;
  so.f_tol = options.f_tol;
  so.x_tol = INFINITY;
  so.step = 2.0;
  so.lower = kLogLower;
  so.upper = kLogUpper;
  so.max_evals = 1000;
  bool any = false;
  for (double s : options.starts) {
    auto res = nelder_mead([&](const std::vector<double>& x) { return objective(ratios_of(x)); },
                           std::vector<double>(m + 1, std::log(s)), so);
    any |= res.converged;
    if (res.value < best) {
      best = res.value;
      best_r = ratios_of(res.x);
    }
  }
  std::vector<double> nu(best_r.begin(), best_r.begin() + m);
  return {null_statistic(best_r[m], st.xi_at(nu), d, dims), any};
}

}  // namespace

NullDistributionSample sample_null(Stage stage, const NullStructures& structures, const NullDims& dims,
                                   const NullOptions& options) {
  if (options.nsim < 1) throw ConfigError("nsim must be positive");
  if (dims.N - dims.rank - dims.q_tested <= 0) throw NumericalError("too few observations for the null distribution");
  if (structures.xi.size() != dims.q_tested) throw NumericalError("eigenvalue count does not match the tested block");
  if (options.mode == NuisanceMode::Profiled && !structures.xi_at)
    throw ConfigError("profiled null needs an eigenvalue callback");

  NullDistributionSample out;
  out.stage = stage;
  out.nsim = options.nsim;
  out.seed = options.seed;
  out.draws.resize(options.nsim);
  std::vector<char> failed(options.nsim, 0), retried(options.nsim, 0);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < options.nsim; ++i) {
    for (std::uint64_t attempt = 0; attempt < 2; ++attempt) {
      Engine eng = make_stream(options.seed, {static_cast<std::uint64_t>(i), attempt});
      NullDraw d = draw_null_pieces(eng, dims);
      double stat;
      bool ok;
      if (options.mode == NuisanceMode::PlugIn) {
        InnerResult r = minimize_null_objective(structures.xi, d, dims, options);
        stat = null_statistic(r.ratio, structures.xi, d, dims);
        ok = r.converged;
      } else {
        ProfiledResult r = profiled_draw(structures, d, dims, options);
        stat = r.statistic;
        ok = r.converged;
      }
      out.draws[i] = stat;
      if (ok) break;
      if (attempt == 0) retried[i] = 1;
      else failed[i] = 1;
    }
  }
  for (int i = 0; i < options.nsim; ++i) {
    out.resampled += retried[i];
    out.nonconverged += failed[i];
  }
  out.restarts = static_cast<int>(options.starts.size());
  std::sort(out.draws.begin(), out.draws.end());
  return out;
}

double p_value(double statistic, const NullDistributionSample& sample) {
  if (sample.draws.empty()) throw std::invalid_argument("empty null sample");
  auto it = std::lower_bound(sample.draws.begin(), sample.draws.end(), statistic);
  auto exceed = static_cast<double>(sample.draws.end() - it);
  return (1.0 + exceed) / (1.0 + static_cast<double>(sample.draws.size()));
}

double critical_value(const NullDistributionSample& sample, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must be in (0,1)");
  if (sample.draws.empty()) throw std::invalid_argument("empty null sample");
  const auto n = static_cast<double>(sample.draws.size());
  auto i = static_cast<long>(std::ceil(n + 1.0 - alpha * n - 1e-9));
  i = std::clamp(i, 1L, static_cast<long>(n));
  return sample.draws[i - 1];
}

}  // namespace prolific
