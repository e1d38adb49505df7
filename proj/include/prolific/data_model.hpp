#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace prolific {

inline constexpr int kPeriods = 4;

struct CurveObservation {
  double day = 0.0;  // normalized to [0,1]
  std::vector<double> values;
};

struct SubjectRecord {
  std::string id;
  int group = 1;
  std::vector<double> covariates;
  std::array<std::vector<CurveObservation>, kPeriods> periods;

  std::size_t curve_count() const;
};

struct FunctionalCrossoverDataset {
  std::vector<SubjectRecord> subjects;
  std::vector<double> grid;
  std::vector<std::string> covariate_names;

  std::size_t curve_count() const;
  std::size_t grid_size() const { return grid.size(); }
  /// Throws ValidationError on any broken invariant.
  void validate() const;
};

// Direct treatment is on in period 1 for group 1 and period 3 for group 2;
// the carryover indicator is on in the period right after.
inline bool tau_indicator(int group, int period) {
  return (group == 1 && period == 1) || (group == 2 && period == 3);
}
inline bool lambda_indicator(int group, int period) {
  return (group == 1 && period == 2) || (group == 2 && period == 4);
}

struct TreatmentIndicators {
  std::vector<std::array<int, kPeriods>> i_tau;     // [subject][period-1]
  std::vector<std::array<int, kPeriods>> i_lambda;  // [subject][period-1]
};

TreatmentIndicators derive_indicators(const FunctionalCrossoverDataset& dataset);

/// Row-per-curve view of a dataset, ordered by subject, period, then curve.
/// Most numerical stages work on this flat form.
struct CurveTable {
  Eigen::MatrixXd values;  // curves x R
  std::vector<int> subject;
  std::vector<int> period;  // 1..4
  std::vector<double> day;
  std::vector<int> i_tau;
  std::vector<int> i_lambda;
  Eigen::MatrixXd covariates;  // curves x L
  std::vector<double> grid;
  /// [start, start+len) rows belonging to each subject.
  std::vector<std::pair<int, int>> subject_blocks;

  int rows() const { return static_cast<int>(values.rows()); }
};

CurveTable flatten(const FunctionalCrossoverDataset& dataset);

enum class CsvFormat { Auto, Wide, Long };

struct CsvSchema {
  CsvFormat format = CsvFormat::Auto;
  /// Nominal period length used to normalize days that fall outside [0,1].
  /// When absent the largest observed day is used.
  std::optional<double> period_length;
};

FunctionalCrossoverDataset load_dataset(const std::string& path, const CsvSchema& schema = {});
void save_dataset(const FunctionalCrossoverDataset& dataset, const std::string& path,
                  CsvFormat format = CsvFormat::Wide);

}  // namespace prolific
