#pragma once

#include <vector>

#include <Eigen/Dense>

namespace prolific {

/// Cubic B-splines on [0,1] with equally spaced interior knots; the knot
/// sequence is extended uniformly past both ends.
class CubicBSpline {
 public:
  explicit CubicBSpline(int interior_knots);

  int size() const { return interior_ + 4; }
  int interior_knots() const { return interior_; }

  /// Values of all basis functions at x (clamped to [0,1]).
  Eigen::VectorXd evaluate(double x) const;
  /// Design matrix, one row per point.
  Eigen::MatrixXd design(const std::vector<double>& xs) const;
  /// Second-order difference penalty D'D on the coefficients.
  Eigen::MatrixXd difference_penalty(int order = 2) const;

 private:
  int interior_;
  double h_;
};

/// Truncated power basis (1, d, .., d^h, (d-k_1)_+^h, .., (d-k_Q)_+^h).
struct TruncatedPolyBasis {
  int degree = 1;
  std::vector<double> knots;

  int fixed_size() const { return degree + 1; }
  int random_size() const { return static_cast<int>(knots.size()); }
};

struct BasisRow {
  Eigen::VectorXd fixed_part;
  Eigen::VectorXd random_part;
};

BasisRow build_basis_row(double day, const TruncatedPolyBasis& basis, int indicator);

struct KnotRule {
  int min_knots = 20;
  int max_knots = 40;
  double fraction = 0.25;
};

/// Knots at equally spaced quantile levels of the day multiset. Throws
/// ValidationError for fewer than 3 unique days.
std::vector<double> choose_knots(const std::vector<double>& days, const KnotRule& rule = {});

}  // namespace prolific
