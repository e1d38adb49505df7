#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "prolific/adzc.hpp"
#include "prolific/key_value.hpp"
#include "prolific/prolific.hpp"
#include "prolific/simulator.hpp"

namespace prolific {

enum class Method { Prolific, AdzcChisq, AdzcBoot };
const char* method_name(Method m);
Method parse_method(const std::string& s);

struct ExperimentConfig {
  std::string experiment = "size";
  SimConfig sim;
  std::vector<int> ns;  // subject counts; defaults to {sim.n}
  int reps = 100;
  std::vector<double> alphas = {0.05};
  std::vector<double> alpha1s = {0.10};
  std::vector<double> delta_grid;
  std::vector<double> gamma_rels = {0.0};
  double power_alpha = 0.05;
  std::vector<Method> methods = {Method::Prolific};
  int adzc_reps = -1;  // replicates that also run the competitor; -1 means all
  int boot_B = 500;
  int mixture_draws = 20000;
  int threads = 0;  // 0: leave the OpenMP default
  std::string output_dir = "out";
  std::uint64_t master_seed = 20240601;
  ProlificConfig prolific;
  // analyze only
  std::string dataset_path;
  CsvSchema schema;
  bool quiet = false;

  /// Throws ConfigError.
  void validate() const;
};

/// Reads every recognised key; unknown keys raise ConfigError.
ExperimentConfig experiment_config_from(const KeyValueConfig& kv, const std::string& experiment);

struct LayerOutcome {
  double s1_stat = 0.0, s1_p = 1.0;
  std::vector<double> s1_null_quantiles;  // evenly spaced order statistics of the stage-1 null
  std::optional<double> s2a_stat, s2a_p, s2b_stat, s2b_p;
  std::optional<double> adzc_chisq_full, adzc_chisq_reduced, adzc_boot_full, adzc_boot_reduced;
  Ratios full_ratios{0.0, 0.0, 0.0};
};

struct ReplicateRecord {
  std::string fingerprint;
  int n = 0;
  double delta = 0.0, gamma_rel = 0.0;
  int rep = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double seconds = 0.0;
  std::vector<double> eigenvalues;
  std::vector<LayerOutcome> layers;

  int K() const { return static_cast<int>(layers.size()); }
};

nlohmann::json to_json(const ReplicateRecord& r);
ReplicateRecord replicate_from_json(const nlohmann::json& j);

/// Seed of the simulated dataset for (n, rep); effect sizes are deliberately
/// excluded so that every cell of a power curve shares its random numbers.
std::uint64_t replicate_seed(std::uint64_t master, int n, int rep);

std::string replicate_fingerprint(const ExperimentConfig& cfg, int n, double delta, double gamma_rel, int rep);

ReplicateRecord run_replicate(const ExperimentConfig& cfg, int n, double delta, double gamma_rel, int rep);

/// True when the stored record carries every branch this config asks for.
bool record_complete(const ReplicateRecord& r, const ExperimentConfig& cfg);

using Progress = std::function<void(int done, int total)>;

/// All replicates of one simulation cell, reusing matching files under
/// output_dir/replicates.
std::vector<ReplicateRecord> run_cell(const ExperimentConfig& cfg, int n, double delta, double gamma_rel,
                                      const Progress& progress = {});

/// Global decision of a method for a replicate; empty when the method was not
/// run for it or the replicate failed.
std::optional<bool> replicate_rejects(const ReplicateRecord& r, Method m, double alpha, double alpha1);

struct SizeRow {
  std::string method;
  int n = 0;
  double alpha = 0.0, alpha1 = 0.0;
  double empirical_size = 0.0, mc_se = 0.0;
  int reps = 0;
};

struct PowerRow {
  std::string method;
  int n = 0;
  double delta = 0.0, gamma_rel = 0.0, alpha1 = 0.0;
  double power = 0.0, mc_se = 0.0;
  int reps = 0;
};

/// Rejection fraction with its binomial standard error.
std::pair<double, double> rejection_rate(const std::vector<ReplicateRecord>& recs, Method m, double alpha,
                                         double alpha1, int* count = nullptr);

std::vector<SizeRow> experiment_size(const ExperimentConfig& cfg, const Progress& progress = {});
std::vector<PowerRow> experiment_power(const ExperimentConfig& cfg, const Progress& progress = {});

/// Runs the full test on a CSV dataset, writes report.json and the surface
/// grids into output_dir and returns the report.
nlohmann::json analyze(const ExperimentConfig& cfg);

void write_size_csv(const std::vector<SizeRow>& rows, const std::string& path);
void write_power_csv(const std::vector<PowerRow>& rows, const std::string& path);

}  // namespace prolific
