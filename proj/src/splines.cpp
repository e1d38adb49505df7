#include "prolific/splines.hpp"

#include <algorithm>
#include <cmath>

#include "prolific/errors.hpp"

namespace prolific {

CubicBSpline::CubicBSpline(int interior_knots) : interior_(interior_knots) {
  if (interior_knots < 0) throw ConfigError("negative knot count");
  h_ = 1.0 / (interior_knots + 1);
}

Eigen::VectorXd CubicBSpline::evaluate(double x) const {
  Eigen::VectorXd b = Eigen::VectorXd::Zero(size());
  x = std::clamp(x, 0.0, 1.0);
  int i = std::min(static_cast<int>(std::floor(x / h_)), interior_);
  double u = x / h_ - i;
  double u2 = u * u, u3 = u2 * u;
  b(i) = (1.0 - u) * (1.0 - u) * (1.0 - u) / 6.0;
  b(i + 1) = (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0;
  b(i + 2) = (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0;
  b(i + 3) = u3 / 6.0;
  return b;
}

Eigen::MatrixXd CubicBSpline::design(const std::vector<double>& xs) const {
  Eigen::MatrixXd B(xs.size(), size());
  for (std::size_t r = 0; r < xs.size(); ++r) B.row(r) = evaluate(xs[r]).transpose();
  return B;
}

Eigen::MatrixXd CubicBSpline::difference_penalty(int order) const {
  Eigen::MatrixXd D = Eigen::MatrixXd::Identity(size(), size());
  for (int k = 0; k < order; ++k) {
    Eigen::MatrixXd next(D.rows() - 1, D.cols());
    for (int r = 0; r + 1 < D.rows(); ++r) next.row(r) = D.row(r + 1) - D.row(r);
    D = next;
  }
  return D.transpose() * D;
}

BasisRow build_basis_row(double day, const TruncatedPolyBasis& basis, int indicator) {
  BasisRow row;
  row.fixed_part = Eigen::VectorXd::Zero(basis.fixed_size());
  row.random_part = Eigen::VectorXd::Zero(basis.random_size());
  if (indicator == 0) return row;
  double p = 1.0;
  for (int e = 0; e <= basis.degree; ++e) {
    row.fixed_part(e) = p;
    p *= day;
  }
  for (int q = 0; q < basis.random_size(); ++q) {
    double t = day - basis.knots[q];
    row.random_part(q) = t > 0.0 ? (basis.degree == 0 ? 1.0 : std::pow(t, basis.degree)) : 0.0;
  }
  return row;
}

std::vector<double> choose_knots(const std::vector<double>& days, const KnotRule& rule) {
  std::vector<double> sorted = days;
  std::sort(sorted.begin(), sorted.end());
  int n_unique = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i)
    if (i == 0 || sorted[i] != sorted[i - 1]) ++n_unique;
  if (n_unique < 3) throw ValidationError("need at least 3 unique days to place knots");

  int q = std::max(rule.min_knots,
                   std::min(static_cast<int>(std::floor(rule.fraction * n_unique)), rule.max_knots));
  q = std::min(q, n_unique - 2);

  std::vector<double> knots(q);
  const double last = static_cast<double>(sorted.size() - 1);
  for (int k = 0; k < q; ++k) {
    double pos = last * (k + 1) / (q + 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    double w = pos - lo;
    knots[k] = (1.0 - w) * sorted[lo] + w * sorted[hi];
    if (k > 0 && knots[k] <= knots[k - 1]) knots[k] = knots[k - 1] + 1e-9;
  }
  return knots;
}

}  // namespace prolific
