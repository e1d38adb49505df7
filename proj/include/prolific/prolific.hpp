#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "prolific/data_model.hpp"
#include "prolific/fpca.hpp"
#include "prolific/lmm.hpp"
#include "prolific/null_sampler.hpp"
#include "prolific/smoothing.hpp"

namespace prolific {

struct ProlificConfig {
  double alpha = 0.05;
  double alpha1 = 0.10;
  int nsim = 2000;
  std::uint64_t seed = 1;
  SmoothConfig smooth;
  FpcaConfig fpca;  // pve lives here
  DesignConfig design;
  CovarianceMethod covariance = CovarianceMethod::CompoundSymmetry;
  NuisanceMode null_mode = NuisanceMode::PlugIn;
  bool parallel_layers = false;
};

/// Everything one direction needs for its tests.
struct PreparedLayer {
  int k = 0;
  ProjectedLmmProblem raw;
  WithinSubjectCovariance covariance;
  ProjectedLmmProblem whitened;
  CrossProducts cp;
  VarianceRatios full_fit;
  std::optional<VarianceRatios> reduced_fit;

  const VarianceRatios& reduced();
};

/// Algorithm steps up to the per-direction REML fits.
struct Pipeline {
  CurveTable table;
  MeanModelFit mean;
  MarginalEigenSystem eig;
  Eigen::MatrixXd scores;  // curves x K
  std::vector<double> knots;
  std::vector<PreparedLayer> layers;
};

Pipeline prepare_pipeline(const FunctionalCrossoverDataset& dataset, const ProlificConfig& config);

struct StageTest {
  StageStatistic statistic;
  double p_value = 1.0;
  NullDistributionSample null;
};

/// Null seed for (layer, stage) under a master seed.
std::uint64_t stage_seed(std::uint64_t master, int k, Stage stage);

NullStructures null_structures(PreparedLayer& layer, const StageStatistic& st);
StageTest run_stage(PreparedLayer& layer, Stage stage, const ProlificConfig& config);

struct LayerRecord {
  int k = 0;
  double stage1_stat = 0.0;
  double stage1_p = 1.0;
  bool carryover_rejected = false;
  Stage stage2_branch = Stage::S2b;
  double stage2_stat = 0.0;
  double stage2_p = 1.0;
};

struct ProlificResult {
  int K = 0;
  std::vector<LayerRecord> layers;
  double alpha = 0.05;
  double alpha1 = 0.10;
  bool global_reject = false;
  double min_p = 1.0;
};

/// Per-direction rule at levels that are already Bonferroni-divided.
LayerRecord two_stage_k(PreparedLayer& layer, double alpha_k, double alpha1_k, const ProlificConfig& config);

/// Same rule from precomputed p-values; the unused branch may be absent.
LayerRecord two_stage_decision(int k, double s1_stat, double s1_p, std::optional<double> s2a_stat,
                               std::optional<double> s2a_p, std::optional<double> s2b_stat,
                               std::optional<double> s2b_p, double alpha1_k);

ProlificResult combine(std::vector<LayerRecord> layers, double alpha, double alpha1);

ProlificResult run_prolific(Pipeline& pipeline, const ProlificConfig& config);
ProlificResult run_prolific(const FunctionalCrossoverDataset& dataset, const ProlificConfig& config);

}  // namespace prolific
