#include "prolific/prolific.hpp"

#include <algorithm>
#include <stdexcept>

#include "prolific/errors.hpp"
#include "prolific/rng.hpp"

namespace prolific {

const VarianceRatios& PreparedLayer::reduced() {
  if (!reduced_fit) reduced_fit = fit_reml(cp, {true, true, false}, FixedSet{true, false});
  return *reduced_fit;
}

Pipeline prepare_pipeline(const FunctionalCrossoverDataset& dataset, const ProlificConfig& config) {
  dataset.validate();
  int per_group[2] = {0, 0};
  for (const auto& s : dataset.subjects)
    if (s.curve_count() > 0) ++per_group[s.group - 1];
  if (per_group[0] < 2 || per_group[1] < 2) throw ValidationError("need at least 2 subjects with data in each group");

  Pipeline pl;
  pl.table = flatten(dataset);
  pl.mean = fit_facm_mean(pl.table, config.smooth);
  Eigen::MatrixXd residuals = demean(pl.table, pl.mean);
  pl.eig = marginal_fpca(residuals, pl.table.grid, config.fpca);
  if (pl.eig.K() == 0) throw NumericalError("no eigen-direction retained");
  pl.scores = quasi_project(pl.table.values, pl.table.grid, pl.eig);
  pl.knots = choose_knots(pl.table.day, config.design.knot_rule);

  const int K = pl.eig.K();
  pl.layers.resize(K);
  std::vector<std::exception_ptr> errors(K);
#pragma omp parallel for schedule(dynamic) if (config.parallel_layers)
  for (int k = 0; k < K; ++k) {
    try {
      PreparedLayer& L = pl.layers[k];
      L.k = k;
      L.raw = build_design(make_layer(pl.table, pl.scores, k), config.design, pl.knots);
      L.covariance = estimate_within_covariance(L.raw, config.covariance);
      L.whitened = whiten(L.raw, L.covariance);
      L.cp = CrossProducts(L.whitened);
      L.full_fit = fit_reml(L.cp, {true, true, true}, FixedSet{true, true});
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return pl;
}

std::uint64_t stage_seed(std::uint64_t master, int k, Stage stage) {
  return derive_seed(master, {0x6E756C6CULL, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(stage)});
}

NullStructures null_structures(PreparedLayer& layer, const StageStatistic& st) {
  NullStructures ns;
  ns.xi = st.xi;
  const CrossProducts* cp = &layer.cp;
  std::vector<int> nuisance;
  FixedSet set{true, true};
  switch (st.stage) {
    case Stage::S1: nuisance = {kMu, kTau}; break;
    case Stage::S2a: nuisance = {kMu, kLambda}; break;
    case Stage::S2b:
      nuisance = {kMu};
      set = {true, false};
      break;
  }
  for (int c : nuisance) ns.nuisance_hat.push_back(st.ratios.ratios[c]);
  const int tested = st.tested;
  auto to_ratios = [nuisance](const std::vector<double>& nu) {
    Ratios r{0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < nuisance.size(); ++i) r[nuisance[i]] = nu[i];
    return r;
  };
  ns.xi_at = [cp, tested, set, to_ratios](const std::vector<double>& nu) {
    return xi_eigenvalues(*cp, tested, to_ratios(nu), set);
  };
  ns.omega_at = [cp, nuisance, set, to_ratios](const std::vector<double>& nu) {
    return omega_eigenvalues(*cp, nuisance, to_ratios(nu), set);
  };
  return ns;
}

StageTest run_stage(PreparedLayer& layer, Stage stage, const ProlificConfig& config) {
  StageTest out;
  const VarianceRatios* reduced = stage == Stage::S2b ? &layer.reduced() : nullptr;
  out.statistic = pqgf_statistic(layer.cp, layer.whitened, stage, layer.full_fit, reduced);
  NullDims dims{layer.cp.N(), out.statistic.reml_rank, out.statistic.q_tested, out.statistic.h_tested};
  NullOptions opt;
  opt.nsim = config.nsim;
  opt.seed = stage_seed(config.seed, layer.k, stage);
  opt.mode = config.null_mode;
  out.null = sample_null(stage, null_structures(layer, out.statistic), dims, opt);
  out.p_value = p_value(out.statistic.statistic, out.null);
  return out;
}

LayerRecord two_stage_k(PreparedLayer& layer, double alpha_k, double alpha1_k, const ProlificConfig& config) {
  (void)alpha_k;
  StageTest s1 = run_stage(layer, Stage::S1, config);
  LayerRecord rec;
  rec.k = layer.k;
  rec.stage1_stat = s1.statistic.statistic;
  rec.stage1_p = s1.p_value;
  rec.carryover_rejected = s1.p_value < alpha1_k;
  rec.stage2_branch = rec.carryover_rejected ? Stage::S2a : Stage::S2b;
  StageTest s2 = run_stage(layer, rec.stage2_branch, config);
  rec.stage2_stat = s2.statistic.statistic;
  rec.stage2_p = s2.p_value;
  return rec;
}

LayerRecord two_stage_decision(int k, double s1_stat, double s1_p, std::optional<double> s2a_stat,
                               std::optional<double> s2a_p, std::optional<double> s2b_stat,
                               std::optional<double> s2b_p, double alpha1_k) {
  LayerRecord rec;
  rec.k = k;
  rec.stage1_stat = s1_stat;
  rec.stage1_p = s1_p;
  rec.carryover_rejected = s1_p < alpha1_k;
  rec.stage2_branch = rec.carryover_rejected ? Stage::S2a : Stage::S2b;
  const auto& stat = rec.carryover_rejected ? s2a_stat : s2b_stat;
  const auto& p = rec.carryover_rejected ? s2a_p : s2b_p;
  if (!stat || !p) throw std::invalid_argument("stage-2 branch result missing for layer " + std::to_string(k));
  rec.stage2_stat = *stat;
  rec.stage2_p = *p;
  return rec;
}

ProlificResult combine(std::vector<LayerRecord> layers, double alpha, double alpha1) {
  ProlificResult res;
  res.K = static_cast<int>(layers.size());
  res.alpha = alpha;
  res.alpha1 = alpha1;
  res.layers = std::move(layers);
  res.min_p = 1.0;
  for (const auto& l : res.layers) res.min_p = std::min(res.min_p, l.stage2_p);
  res.global_reject = res.K > 0 && res.min_p < alpha / res.K;
  return res;
}

ProlificResult run_prolific(Pipeline& pipeline, const ProlificConfig& config) {
  const int K = static_cast<int>(pipeline.layers.size());
  if (K == 0) throw NumericalError("no eigen-direction retained");
  std::vector<LayerRecord> records(K);
  std::vector<std::exception_ptr> errors(K);
#pragma omp parallel for schedule(dynamic) if (config.parallel_layers)
  for (int k = 0; k < K; ++k) {
    try {
      records[k] = two_stage_k(pipeline.layers[k], config.alpha / K, config.alpha1 / K, config);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return combine(std::move(records), config.alpha, config.alpha1);
}

ProlificResult run_prolific(const FunctionalCrossoverDataset& dataset, const ProlificConfig& config) {
  Pipeline pl = prepare_pipeline(dataset, config);
  return run_prolific(pl, config);
}

}  // namespace prolific
