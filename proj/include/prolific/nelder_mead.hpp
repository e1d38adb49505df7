#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

namespace prolific {

struct SimplexOptions {
  double f_tol = 1e-7;  // stop when max - min over the simplex falls below this
  double x_tol = 1e-6;  // ... and the simplex diameter falls below this
  int max_evals = 2000;
  double step = 1.0;
  double lower = -1e300;  // box applied to every coordinate
  double upper = 1e300;
};

struct SimplexResult {
  std::vector<double> x;
  double value = 0.0;
  int evaluations = 0;
  bool converged = false;
};

// Standard Nelder-Mead (reflection 1, expansion 2, contraction 0.5, shrink 0.5)
// with coordinates clamped into the box.
inline SimplexResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                                 const std::vector<double>& x0, const SimplexOptions& opt = {}) {
  const std::size_t n = x0.size();
  auto clamp = [&](std::vector<double>& v) {
    for (double& c : v) c = std::clamp(c, opt.lower, opt.upper);
  };
  std::vector<std::vector<double>> pts(n + 1, x0);
  clamp(pts[0]);
  for (std::size_t i = 0; i < n; ++i) {
    pts[i + 1][i] += opt.step;
    clamp(pts[i + 1]);
    if (pts[i + 1][i] == pts[0][i]) {
      pts[i + 1][i] -= opt.step;
      clamp(pts[i + 1]);
    }
  }
  SimplexResult res;
  std::vector<double> fv(n + 1);
  auto eval = [&](std::vector<double>& v) {
    ++res.evaluations;
    double y = f(v);
    return std::isfinite(y) ? y : 1e300;
  };
  for (std::size_t i = 0; i <= n; ++i) fv[i] = eval(pts[i]);

  std::vector<std::size_t> order(n + 1);
  std::vector<double> centroid(n), trial(n), trial2(n);
  while (res.evaluations < opt.max_evals) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
    const std::size_t best = order[0], worst = order[n], second = order[n > 0 ? n - 1 : 0];
    double diameter = 0.0;
    for (std::size_t i = 0; i <= n; ++i)
      for (std::size_t k = 0; k < n; ++k) diameter = std::max(diameter, std::abs(pts[i][k] - pts[best][k]));
    if (fv[worst] - fv[best] <= opt.f_tol && diameter <= opt.x_tol) {
      res.converged = true;
      break;
    }
    if (n == 0) {
      res.converged = true;
      break;
    }
    std::fill(centroid.begin(), centroid.end(), 0.0);
    for (std::size_t i = 0; i <= n; ++i)
      if (i != worst)
        for (std::size_t k = 0; k < n; ++k) centroid[k] += pts[i][k] / n;

    for (std::size_t k = 0; k < n; ++k) trial[k] = centroid[k] + (centroid[k] - pts[worst][k]);
    clamp(trial);
    double fr = eval(trial);
    if (fr < fv[best]) {
      for (std::size_t k = 0; k < n; ++k) trial2[k] = centroid[k] + 2.0 * (centroid[k] - pts[worst][k]);
      clamp(trial2);
      double fe = eval(trial2);
      if (fe < fr) {
        pts[worst] = trial2;
        fv[worst] = fe;
      } else {
        pts[worst] = trial;
        fv[worst] = fr;
      }
      continue;
    }
    if (fr < fv[second]) {
      pts[worst] = trial;
      fv[worst] = fr;
      continue;
    }
    const bool outside = fr < fv[worst];
    for (std::size_t k = 0; k < n; ++k)
      trial2[k] = outside ? centroid[k] + 0.5 * (trial[k] - centroid[k])
                          : centroid[k] + 0.5 * (pts[worst][k] - centroid[k]);
    clamp(trial2);
    double fc = eval(trial2);
    if (fc < std::min(fr, fv[worst])) {
      pts[worst] = trial2;
      fv[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == best) continue;
      for (std::size_t k = 0; k < n; ++k) pts[i][k] = pts[best][k] + 0.5 * (pts[i][k] - pts[best][k]);
      fv[i] = eval(pts[i]);
    }
  }
  std::size_t b = static_cast<std::size_t>(std::min_element(fv.begin(), fv.end()) - fv.begin());
  res.x = pts[b];
  res.value = fv[b];
  return res;
}

}  // namespace prolific
