#include "prolific/harness.hpp"

#include <omp.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "prolific/errors.hpp"
#include "prolific/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace prolific {

const char* method_name(Method m) {
  switch (m) {
    case Method::Prolific: return "prolific";
    case Method::AdzcChisq: return "adzc_chisq";
    case Method::AdzcBoot: return "adzc_boot";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  if (s == "prolific") return Method::Prolific;
  if (s == "adzc_chisq") return Method::AdzcChisq;
  if (s == "adzc_boot") return Method::AdzcBoot;
  throw ConfigError("unknown method '" + s + "' (expected prolific, adzc_chisq or adzc_boot)");
}

void ExperimentConfig::validate() const {
  sim.validate();
  if (reps < 1) throw ConfigError("reps must be >= 1");
  for (int n : ns)
    if (n < 4) throw ConfigError("every n must be >= 4");
  for (double a : alphas)
    if (!(a > 0.0 && a < 1.0)) throw ConfigError("alphas must lie in (0,1)");
  for (double a : alpha1s)
    if (!(a > 0.0 && a < 1.0)) throw ConfigError("alpha1s must lie in (0,1)");
  if (alphas.empty() || alpha1s.empty()) throw ConfigError("alphas and alpha1s must be non-empty");
  if (!(power_alpha > 0.0 && power_alpha < 1.0)) throw ConfigError("power_alpha must lie in (0,1)");
  for (std::size_t i = 0; i < delta_grid.size(); ++i) {
    if (delta_grid[i] < 0.0) throw ConfigError("delta_grid must be nonnegative");
    if (i > 0 && delta_grid[i] <= delta_grid[i - 1]) throw ConfigError("delta_grid must be ascending");
  }
  for (double g : gamma_rels)
    if (g < 0.0) throw ConfigError("gamma_rels must be nonnegative");
  if (methods.empty()) throw ConfigError("methods must be non-empty");
  if (prolific.nsim < 100) throw ConfigError("nsim must be >= 100");
  if (!(prolific.fpca.pve > 0.0 && prolific.fpca.pve <= 1.0)) throw ConfigError("pve must lie in (0,1]");
  for (Method m : methods)
    if (m == Method::AdzcBoot && boot_B < 100) throw ConfigError("boot_B must be >= 100");
  if (experiment == "size" && sim.delta != 0.0) throw ConfigError("a size experiment needs sim.delta = 0");
  if (experiment == "power" && delta_grid.empty()) throw ConfigError("a power experiment needs delta_grid");
}

ExperimentConfig experiment_config_from(const KeyValueConfig& kv, const std::string& experiment) {
  ExperimentConfig c;
  c.experiment = kv.get_string("experiment", experiment);
  if (c.experiment != experiment)
    throw ConfigError("config is for experiment '" + c.experiment + "', not '" + experiment + "'");
  SimConfig& s = c.sim;
  s.n = static_cast<int>(kv.get_int("sim.n", s.n));
  s.m_min = static_cast<int>(kv.get_int("sim.m_min", s.m_min));
  s.m_max = static_cast<int>(kv.get_int("sim.m_max", s.m_max));
  s.grid_size = static_cast<int>(kv.get_int("sim.grid_size", s.grid_size));
  s.delta = kv.get_double("sim.delta", s.delta);
  s.gamma_rel = kv.get_double("sim.gamma_rel", s.gamma_rel);
  s.beta_a = kv.get_double("sim.beta_a", s.beta_a);
  s.beta_b = kv.get_double("sim.beta_b", s.beta_b);
  s.var_zeta1 = kv.get_double("sim.var_zeta1", s.var_zeta1);
  s.var_zeta2 = kv.get_double("sim.var_zeta2", s.var_zeta2);
  s.var_r1 = kv.get_double("sim.var_r1", s.var_r1);
  s.var_r2 = kv.get_double("sim.var_r2", s.var_r2);
  s.var_wn = kv.get_double("sim.var_wn", s.var_wn);
  s.seed = static_cast<std::uint64_t>(kv.get_int("sim.seed", static_cast<long long>(s.seed)));

  for (long long n : kv.get_ints("ns", {s.n})) c.ns.push_back(static_cast<int>(n));
  c.reps = static_cast<int>(kv.get_int("reps", c.reps));
  c.alphas = kv.get_doubles("alphas", c.alphas);
  c.alpha1s = kv.get_doubles("alpha1s", c.alpha1s);
  c.delta_grid = kv.get_doubles("delta_grid", c.delta_grid);
  c.gamma_rels = kv.get_doubles("gamma_rels", c.gamma_rels);
  c.power_alpha = kv.get_double("power_alpha", c.power_alpha);
  std::vector<std::string> methods = kv.get_strings("methods", {"prolific"});
  c.methods.clear();
  for (const auto& m : methods) c.methods.push_back(parse_method(m));
  c.adzc_reps = static_cast<int>(kv.get_int("adzc_reps", c.adzc_reps));
  c.boot_B = static_cast<int>(kv.get_int("boot_B", c.boot_B));
  c.mixture_draws = static_cast<int>(kv.get_int("mixture_draws", c.mixture_draws));
  c.threads = static_cast<int>(kv.get_int("threads", c.threads));
  c.output_dir = kv.get_string("output_dir", c.output_dir);
  c.master_seed = static_cast<std::uint64_t>(kv.get_int("master_seed", static_cast<long long>(c.master_seed)));
  c.quiet = kv.get_int("quiet", 0) != 0;

  ProlificConfig& p = c.prolific;
  p.alpha = kv.get_double("alpha", p.alpha);
  p.alpha1 = kv.get_double("alpha1", p.alpha1);
  p.nsim = static_cast<int>(kv.get_int("nsim", experiment == "analyze" ? 5000 : 2000));
  p.fpca.pve = kv.get_double("pve", experiment == "analyze" ? 0.95 : 0.90);
  p.smooth.s_knots = static_cast<int>(kv.get_int("s_knots", p.smooth.s_knots));
  p.smooth.d_knots = static_cast<int>(kv.get_int("d_knots", p.smooth.d_knots));
  std::string sel = kv.get_string("mean_selection", "subject_cv");
  if (sel == "subject_cv") p.smooth.criterion = SelectionCriterion::SubjectFoldCv;
  else if (sel == "gcv") p.smooth.criterion = SelectionCriterion::Gcv;
  else throw ConfigError("mean_selection must be subject_cv or gcv");
  std::string cov = kv.get_string("covariance", "compound_symmetry");
  if (cov == "compound_symmetry") p.covariance = CovarianceMethod::CompoundSymmetry;
  else if (cov == "score_fpca") p.covariance = CovarianceMethod::ScoreFpca;
  else throw ConfigError("covariance must be compound_symmetry or score_fpca");
  std::string smooth = kv.get_string("cov_smoothing", "raw");
  if (smooth == "raw") p.fpca.smoothing = CovarianceSmoothing::Raw;
  else if (smooth == "local_quadratic") p.fpca.smoothing = CovarianceSmoothing::LocalQuadratic;
  else throw ConfigError("cov_smoothing must be raw or local_quadratic");
  p.fpca.bandwidth = kv.get_double("cov_bandwidth", p.fpca.bandwidth);
  std::string quad = kv.get_string("quadrature", "trapezoid");
  if (quad == "trapezoid") p.fpca.quadrature = Quadrature::Trapezoid;
  else if (quad == "riemann") p.fpca.quadrature = Quadrature::RiemannMean;
  else throw ConfigError("quadrature must be trapezoid or riemann");
  std::string mode = kv.get_string("null_mode", "plugin");
  if (mode == "plugin") p.null_mode = NuisanceMode::PlugIn;
  else if (mode == "profiled") p.null_mode = NuisanceMode::Profiled;
  else throw ConfigError("null_mode must be plugin or profiled");
  p.parallel_layers = kv.get_int("parallel_layers", 0) != 0;

  c.dataset_path = kv.get_string("dataset", "");
  std::string fmt = kv.get_string("csv_format", "auto");
  if (fmt == "auto") c.schema.format = CsvFormat::Auto;
  else if (fmt == "wide") c.schema.format = CsvFormat::Wide;
  else if (fmt == "long") c.schema.format = CsvFormat::Long;
  else throw ConfigError("csv_format must be auto, wide or long");
  if (kv.has("period_length")) c.schema.period_length = kv.get_double("period_length", 0.0);

  kv.reject_unknown();
  if (experiment == "analyze") {
    if (!(p.alpha > 0.0 && p.alpha < 1.0) || !(p.alpha1 > 0.0 && p.alpha1 < 1.0))
      throw ConfigError("alpha and alpha1 must lie in (0,1)");
  } else if (experiment == "size" || experiment == "power") {
    c.validate();
  } else {
    c.sim.validate();
  }
  return c;
}

// ---------------------------------------------------------------------------
// replicate records

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> get_opt(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<double>();
}

}  // namespace

json to_json(const ReplicateRecord& r) {
  json j;
  j["fingerprint"] = r.fingerprint;
  j["n"] = r.n;
  j["delta"] = r.delta;
  j["gamma_rel"] = r.gamma_rel;
  j["rep"] = r.rep;
  j["seed"] = r.seed;
  j["ok"] = r.ok;
  j["error"] = r.error;
  j["seconds"] = r.seconds;
  j["eigenvalues"] = r.eigenvalues;
  json layers = json::array();
  for (const auto& l : r.layers) {
    json o;
    o["s1_stat"] = l.s1_stat;
    o["s1_p"] = l.s1_p;
    o["s1_null_quantiles"] = l.s1_null_quantiles;
    o["s2a_stat"] = opt(l.s2a_stat);
    o["s2a_p"] = opt(l.s2a_p);
    o["s2b_stat"] = opt(l.s2b_stat);
    o["s2b_p"] = opt(l.s2b_p);
    o["adzc_chisq_full"] = opt(l.adzc_chisq_full);
    o["adzc_chisq_reduced"] = opt(l.adzc_chisq_reduced);
    o["adzc_boot_full"] = opt(l.adzc_boot_full);
    o["adzc_boot_reduced"] = opt(l.adzc_boot_reduced);
    o["full_ratios"] = {l.full_ratios[0], l.full_ratios[1], l.full_ratios[2]};
    layers.push_back(o);
  }
  j["layers"] = layers;
  return j;
}

ReplicateRecord replicate_from_json(const json& j) {
  ReplicateRecord r;
  r.fingerprint = j.at("fingerprint").get<std::string>();
  r.n = j.at("n").get<int>();
  r.delta = j.at("delta").get<double>();
  r.gamma_rel = j.at("gamma_rel").get<double>();
  r.rep = j.at("rep").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.ok = j.at("ok").get<bool>();
  r.error = j.at("error").get<std::string>();
  r.seconds = j.at("seconds").get<double>();
  r.eigenvalues = j.at("eigenvalues").get<std::vector<double>>();
  for (const auto& o : j.at("layers")) {
    LayerOutcome l;
    l.s1_stat = o.at("s1_stat").get<double>();
    l.s1_p = o.at("s1_p").get<double>();
    l.s1_null_quantiles = o.at("s1_null_quantiles").get<std::vector<double>>();
    l.s2a_stat = get_opt(o, "s2a_stat");
    l.s2a_p = get_opt(o, "s2a_p");
    l.s2b_stat = get_opt(o, "s2b_stat");
    l.s2b_p = get_opt(o, "s2b_p");
    l.adzc_chisq_full = get_opt(o, "adzc_chisq_full");
    l.adzc_chisq_reduced = get_opt(o, "adzc_chisq_reduced");
    l.adzc_boot_full = get_opt(o, "adzc_boot_full");
    l.adzc_boot_reduced = get_opt(o, "adzc_boot_reduced");
    auto fr = o.at("full_ratios").get<std::vector<double>>();
    for (int c = 0; c < 3 && c < static_cast<int>(fr.size()); ++c) l.full_ratios[c] = fr[c];
    r.layers.push_back(std::move(l));
  }
  return r;
}

std::uint64_t replicate_seed(std::uint64_t master, int n, int rep) {
  return derive_seed(master, {static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(rep)});
}

namespace {

double effective_gamma(double delta, double gamma_rel) { return delta == 0.0 ? 0.0 : gamma_rel; }

bool wants(const ExperimentConfig& cfg, Method m) {
  for (Method x : cfg.methods)
    if (x == m) return true;
  return false;
}

bool adzc_for_rep(const ExperimentConfig& cfg, int rep) { return cfg.adzc_reps < 0 || rep < cfg.adzc_reps; }

// Which stage-2 branches (and competitor models) the alpha1 list needs.
void needed_branches(const ExperimentConfig& cfg, double s1_p, int K, bool& full, bool& reduced) {
  full = reduced = false;
  for (double a1 : cfg.alpha1s) {
    if (s1_p < a1 / K) full = true;
    else reduced = true;
  }
}

}  // namespace

std::string replicate_fingerprint(const ExperimentConfig& cfg, int n, double delta, double gamma_rel, int rep) {
  const auto& s = cfg.sim;
  const auto& p = cfg.prolific;
  json j = {
      {"n", n},
      {"delta", delta},
      {"gamma_rel", effective_gamma(delta, gamma_rel)},
      {"rep", rep},
      {"master_seed", cfg.master_seed},
      {"m", {s.m_min, s.m_max}},
      {"R", s.grid_size},
      {"beta", {s.beta_a, s.beta_b}},
      {"var", {s.var_zeta1, s.var_zeta2, s.var_r1, s.var_r2, s.var_wn}},
      {"nsim", p.nsim},
      {"pve", p.fpca.pve},
      {"cov_smoothing", static_cast<int>(p.fpca.smoothing)},
      {"cov_bandwidth", p.fpca.bandwidth},
      {"quadrature", static_cast<int>(p.fpca.quadrature)},
      {"covariance", static_cast<int>(p.covariance)},
      {"null_mode", static_cast<int>(p.null_mode)},
      {"knots", {p.smooth.s_knots, p.smooth.d_knots}},
      {"mean_selection", static_cast<int>(p.smooth.criterion)},
      {"h", {p.design.h_mu, p.design.h_tau, p.design.h_lambda}},
      {"boot_B", cfg.boot_B},
      {"mixture_draws", cfg.mixture_draws},
  };
  return j.dump();
}

ReplicateRecord run_replicate(const ExperimentConfig& cfg, int n, double delta, double gamma_rel, int rep) {
  auto t0 = std::chrono::steady_clock::now();
  ReplicateRecord rec;
  rec.fingerprint = replicate_fingerprint(cfg, n, delta, gamma_rel, rep);
  rec.n = n;
  rec.delta = delta;
  rec.gamma_rel = effective_gamma(delta, gamma_rel);
  rec.rep = rep;
  rec.seed = replicate_seed(cfg.master_seed, n, rep);
  try {
    SimConfig sim = cfg.sim;
    sim.n = n;
    sim.delta = delta;
    sim.gamma_rel = rec.gamma_rel;
    sim.seed = rec.seed;
    FunctionalCrossoverDataset ds = generate_dataset(sim);
    ProlificConfig pc = cfg.prolific;
    pc.seed = rec.seed;
    Pipeline pl = prepare_pipeline(ds, pc);
    const int K = static_cast<int>(pl.layers.size());
    rec.eigenvalues.assign(pl.eig.eigenvalues.data(), pl.eig.eigenvalues.data() + K);
    const bool run_chisq = wants(cfg, Method::AdzcChisq) && adzc_for_rep(cfg, rep);
    const bool run_boot = wants(cfg, Method::AdzcBoot) && adzc_for_rep(cfg, rep);
    for (int k = 0; k < K; ++k) {
      PreparedLayer& layer = pl.layers[k];
      LayerOutcome out;
      out.full_ratios = layer.full_fit.ratios;
      StageTest s1 = run_stage(layer, Stage::S1, pc);
      out.s1_stat = s1.statistic.statistic;
      out.s1_p = s1.p_value;
      const int nq = 200;
      const auto& draws = s1.null.draws;
      for (int q = 0; q < nq; ++q)
        out.s1_null_quantiles.push_back(draws[static_cast<std::size_t>((q + 0.5) / nq * draws.size())]);
      bool full = false, reduced = false;
      needed_branches(cfg, out.s1_p, K, full, reduced);
      if (full) {
        StageTest s = run_stage(layer, Stage::S2a, pc);
        out.s2a_stat = s.statistic.statistic;
        out.s2a_p = s.p_value;
      }
      if (reduced) {
        StageTest s = run_stage(layer, Stage::S2b, pc);
        out.s2b_stat = s.statistic.statistic;
        out.s2b_p = s.p_value;
      }
      for (int with = 0; with < 2; ++with) {
        if ((with == 1 && !full) || (with == 0 && !reduced)) continue;
        AdzcOptions ao;
        ao.B = cfg.boot_B;
        ao.mixture_draws = cfg.mixture_draws;
        if (run_chisq) {
          ao.mode = AdzcMode::ChisqMixture;
          ao.seed = derive_seed(rec.seed, {0x7a63ULL, static_cast<std::uint64_t>(k), 0, static_cast<std::uint64_t>(with)});
          double p = run_adzc(layer, with == 1, ao).p_value;
          (with ? out.adzc_chisq_full : out.adzc_chisq_reduced) = p;
        }
        if (run_boot) {
          ao.mode = AdzcMode::Bootstrap;
          ao.seed = derive_seed(rec.seed, {0x7a63ULL, static_cast<std::uint64_t>(k), 1, static_cast<std::uint64_t>(with)});
          double p = run_adzc(layer, with == 1, ao).p_value;
          (with ? out.adzc_boot_full : out.adzc_boot_reduced) = p;
        }
      }
      rec.layers.push_back(std::move(out));
    }
    rec.ok = true;
  } catch (const NumericalError& e) {
    rec.ok = false;
    rec.error = e.what();
    rec.layers.clear();
  } catch (const ValidationError& e) {
    rec.ok = false;
    rec.error = e.what();
    rec.layers.clear();
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

bool record_complete(const ReplicateRecord& r, const ExperimentConfig& cfg) {
  if (!r.ok) return true;
  const int K = r.K();
  const bool chisq = wants(cfg, Method::AdzcChisq) && adzc_for_rep(cfg, r.rep);
  const bool boot = wants(cfg, Method::AdzcBoot) && adzc_for_rep(cfg, r.rep);
  for (const auto& l : r.layers) {
    bool full = false, reduced = false;
    needed_branches(cfg, l.s1_p, K, full, reduced);
    if (full && (!l.s2a_p || (chisq && !l.adzc_chisq_full) || (boot && !l.adzc_boot_full))) return false;
    if (reduced && (!l.s2b_p || (chisq && !l.adzc_chisq_reduced) || (boot && !l.adzc_boot_reduced))) return false;
  }
  return true;
}

namespace {

std::string cell_dir(const ExperimentConfig& cfg, int n, double delta, double gamma_rel) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "n%d_delta%.6g_gamma%.6g", n, delta, effective_gamma(delta, gamma_rel));
  return (fs::path(cfg.output_dir) / "replicates" / buf).string();
}

}  // namespace

std::vector<ReplicateRecord> run_cell(const ExperimentConfig& cfg, int n, double delta, double gamma_rel,
                                      const Progress& progress) {
  const std::string dir = cell_dir(cfg, n, delta, gamma_rel);
  fs::create_directories(dir);
  std::vector<ReplicateRecord> out(cfg.reps);
  std::atomic<int> done{0};
  if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
#pragma omp parallel for schedule(dynamic)
  for (int rep = 0; rep < cfg.reps; ++rep) {
    char name[32];
    std::snprintf(name, sizeof name, "rep_%05d.json", rep);
    const std::string path = (fs::path(dir) / name).string();
    bool reused = false;
    const std::string fp = replicate_fingerprint(cfg, n, delta, gamma_rel, rep);
    {
      std::ifstream in(path);
      if (in) {
        try {
          ReplicateRecord r = replicate_from_json(json::parse(in));
          if (r.fingerprint == fp && record_complete(r, cfg)) {
            out[rep] = std::move(r);
            reused = true;
          }
        } catch (const std::exception&) {
        }
      }
    }
    if (!reused) {
      out[rep] = run_replicate(cfg, n, delta, gamma_rel, rep);
      std::string text = to_json(out[rep]).dump();
#pragma omp critical(replicate_writer)
      {
        const std::string tmp = path + ".tmp";
        std::ofstream o(tmp);
        o << text << '\n';
        o.close();
        fs::rename(tmp, path);
      }
    }
    int d = ++done;
    if (progress) {
#pragma omp critical(replicate_progress)
      progress(d, cfg.reps);
    }
  }
  return out;
}

std::optional<bool> replicate_rejects(const ReplicateRecord& r, Method m, double alpha, double alpha1) {
  if (!r.ok || r.layers.empty()) return std::nullopt;
  const int K = r.K();
  if (m == Method::Prolific) {
    std::vector<LayerRecord> recs;
    for (int k = 0; k < K; ++k) {
      const auto& l = r.layers[k];
      bool carry = l.s1_p < alpha1 / K;
      if ((carry && !l.s2a_p) || (!carry && !l.s2b_p)) return std::nullopt;
      recs.push_back(two_stage_decision(k, l.s1_stat, l.s1_p, l.s2a_stat, l.s2a_p, l.s2b_stat, l.s2b_p, alpha1 / K));
    }
    return combine(std::move(recs), alpha, alpha1).global_reject;
  }
  double min_p = 1.0;
  for (const auto& l : r.layers) {
    bool carry = l.s1_p < alpha1 / K;
    const std::optional<double>& p = m == Method::AdzcChisq ? (carry ? l.adzc_chisq_full : l.adzc_chisq_reduced)
                                                            : (carry ? l.adzc_boot_full : l.adzc_boot_reduced);
    if (!p) return std::nullopt;
    min_p = std::min(min_p, *p);
  }
  return min_p < alpha / K;
}

std::pair<double, double> rejection_rate(const std::vector<ReplicateRecord>& recs, Method m, double alpha,
                                         double alpha1, int* count) {
  int used = 0, rejected = 0;
  for (const auto& r : recs) {
    auto d = replicate_rejects(r, m, alpha, alpha1);
    if (!d) continue;
    ++used;
    rejected += *d ? 1 : 0;
  }
  if (count) *count = used;
  if (used == 0) return {NAN, NAN};
  double p = static_cast<double>(rejected) / used;
  return {p, std::sqrt(p * (1.0 - p) / used)};
}

namespace {

std::string iso_now() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

json config_echo(const ExperimentConfig& c) {
  std::vector<std::string> methods;
  for (Method m : c.methods) methods.push_back(method_name(m));
  return {{"experiment", c.experiment},
          {"ns", c.ns},
          {"reps", c.reps},
          {"alphas", c.alphas},
          {"alpha1s", c.alpha1s},
          {"delta_grid", c.delta_grid},
          {"gamma_rels", c.gamma_rels},
          {"power_alpha", c.power_alpha},
          {"methods", methods},
          {"adzc_reps", c.adzc_reps},
          {"boot_B", c.boot_B},
          {"master_seed", c.master_seed},
          {"nsim", c.prolific.nsim},
          {"pve", c.prolific.fpca.pve},
          {"sim",
           {{"m_min", c.sim.m_min},
            {"m_max", c.sim.m_max},
            {"grid_size", c.sim.grid_size},
            {"beta_a", c.sim.beta_a},
            {"beta_b", c.sim.beta_b},
            {"var_zeta1", c.sim.var_zeta1},
            {"var_zeta2", c.sim.var_zeta2},
            {"var_r1", c.sim.var_r1},
            {"var_r2", c.sim.var_r2},
            {"var_wn", c.sim.var_wn}}}};
}

void write_manifest(const ExperimentConfig& cfg, const std::string& table, double seconds, int failures,
                    const std::string& started) {
  json m;
  m["config"] = config_echo(cfg);
  m["table"] = table;
  m["started"] = started;
  m["wall_seconds"] = seconds;
  m["threads"] = omp_get_max_threads();
  m["failed_replicates"] = failures;
  m["versions"] = {{"prolific", "1.0.0"}, {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                                        std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                                        std::to_string(EIGEN_MINOR_VERSION)}};
  std::ofstream o(fs::path(cfg.output_dir) / "manifest.json");
  o << m.dump(2) << '\n';
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

void write_size_csv(const std::vector<SizeRow>& rows, const std::string& path) {
  std::ofstream o(path);
  o << "method,n,alpha,alpha1,empirical_size,mc_se,reps\n";
  for (const auto& r : rows)
    o << r.method << ',' << r.n << ',' << fmt(r.alpha) << ',' << fmt(r.alpha1) << ',' << fmt(r.empirical_size)
      << ',' << fmt(r.mc_se) << ',' << r.reps << '\n';
}

void write_power_csv(const std::vector<PowerRow>& rows, const std::string& path) {
  std::ofstream o(path);
  o << "method,n,delta,gamma_rel,alpha1,power,mc_se\n";
  for (const auto& r : rows)
    o << r.method << ',' << r.n << ',' << fmt(r.delta) << ',' << fmt(r.gamma_rel) << ',' << fmt(r.alpha1) << ','
      << fmt(r.power) << ',' << fmt(r.mc_se) << '\n';
}

std::vector<SizeRow> experiment_size(const ExperimentConfig& cfg, const Progress& progress) {
  cfg.validate();
  if (cfg.sim.delta != 0.0) throw ConfigError("a size experiment needs sim.delta = 0");
  const std::string started = iso_now();
  auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(cfg.output_dir);
  std::vector<SizeRow> rows;
  int failures = 0;
  for (int n : cfg.ns) {
    auto recs = run_cell(cfg, n, 0.0, 0.0, progress);
    for (const auto& r : recs) failures += r.ok ? 0 : 1;
    for (Method m : cfg.methods)
      for (double a : cfg.alphas)
        for (double a1 : cfg.alpha1s) {
          SizeRow row;
          row.method = method_name(m);
          row.n = n;
          row.alpha = a;
          row.alpha1 = a1;
          auto [p, se] = rejection_rate(recs, m, a, a1, &row.reps);
          row.empirical_size = p;
          row.mc_se = se;
          rows.push_back(row);
        }
  }
  write_size_csv(rows, (fs::path(cfg.output_dir) / "size.csv").string());
  write_manifest(cfg, "size.csv", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(),
                 failures, started);
  return rows;
}

std::vector<PowerRow> experiment_power(const ExperimentConfig& cfg, const Progress& progress) {
  cfg.validate();
  const std::string started = iso_now();
  auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(cfg.output_dir);
  std::vector<PowerRow> rows;
  int failures = 0;
  for (int n : cfg.ns)
    for (double g : cfg.gamma_rels)
      for (double d : cfg.delta_grid) {
        auto recs = run_cell(cfg, n, d, g, progress);
        for (const auto& r : recs) failures += r.ok ? 0 : 1;
        for (Method m : cfg.methods)
          for (double a1 : cfg.alpha1s) {
            PowerRow row;
            row.method = method_name(m);
            row.n = n;
            row.delta = d;
            row.gamma_rel = g;
            row.alpha1 = a1;
            auto [p, se] = rejection_rate(recs, m, cfg.power_alpha, a1, &row.reps);
            row.power = p;
            row.mc_se = se;
            rows.push_back(row);
          }
      }
  write_power_csv(rows, (fs::path(cfg.output_dir) / "power.csv").string());
  write_manifest(cfg, "power.csv", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(),
                 failures, started);
  return rows;
}

json analyze(const ExperimentConfig& cfg) {
  if (cfg.dataset_path.empty()) throw ConfigError("analyze needs a dataset path");
  FunctionalCrossoverDataset ds = load_dataset(cfg.dataset_path, cfg.schema);
  ProlificConfig pc = cfg.prolific;
  Pipeline pl = prepare_pipeline(ds, pc);
  ProlificResult res = run_prolific(pl, pc);

  fs::create_directories(cfg.output_dir);
  const auto& grid = pl.table.grid;
  const int nd = 51;
  auto write_surface = [&](const std::string& name, auto fn) {
    std::ofstream o(fs::path(cfg.output_dir) / name);
    o << "s,d,value\n";
    for (double s : grid)
      for (int j = 0; j < nd; ++j) {
        double d = static_cast<double>(j) / (nd - 1);
        o << fmt(s) << ',' << fmt(d) << ',' << fmt(fn(s, d)) << '\n';
      }
  };
  write_surface("surface_mean.csv", [&](double s, double d) { return pl.mean.mu(s, d); });
  write_surface("surface_treatment.csv", [&](double s, double d) { return pl.mean.tau(s, d); });
  write_surface("surface_carryover.csv", [&](double s, double d) { return pl.mean.lambda(s, d); });
  {
    std::ofstream o(fs::path(cfg.output_dir) / "covariate_effects.csv");
    o << "covariate,s,value\n";
    for (std::size_t l = 0; l < ds.covariate_names.size(); ++l)
      for (double s : grid) o << ds.covariate_names[l] << ',' << fmt(s) << ',' << fmt(pl.mean.beta(static_cast<int>(l), s)) << '\n';
  }
  {
    std::ofstream o(fs::path(cfg.output_dir) / "eigenfunctions.csv");
    o << "k,s,value\n";
    for (int k = 0; k < pl.eig.K(); ++k)
      for (std::size_t r = 0; r < grid.size(); ++r)
        o << (k + 1) << ',' << fmt(grid[r]) << ',' << fmt(pl.eig.eigenfunctions(static_cast<Eigen::Index>(r), k)) << '\n';
  }

  json report;
  report["dataset"] = cfg.dataset_path;
  report["subjects"] = ds.subjects.size();
  report["curves"] = ds.curve_count();
  report["grid_size"] = grid.size();
  report["K"] = res.K;
  report["pve_target"] = pl.eig.pve_target;
  std::vector<double> ev(pl.eig.eigenvalues.data(), pl.eig.eigenvalues.data() + pl.eig.K());
  report["eigenvalues"] = ev;
  double cum = 0.0;
  std::vector<double> pve;
  for (double e : ev) pve.push_back((cum += e) / pl.eig.trace);
  report["cumulative_pve"] = pve;
  report["alpha"] = res.alpha;
  report["alpha1"] = res.alpha1;
  json layers = json::array();
  for (const auto& l : res.layers) {
    const auto& fit = pl.layers[l.k].full_fit;
    layers.push_back({{"k", l.k + 1},
                      {"stage1_stat", l.stage1_stat},
                      {"stage1_p", l.stage1_p},
                      {"carryover_rejected", l.carryover_rejected},
                      {"stage2_branch", l.stage2_branch == Stage::S2a ? "2a" : "2b"},
                      {"stage2_stat", l.stage2_stat},
                      {"stage2_p", l.stage2_p},
                      {"variance_ratios", {{"pi", fit.pi()}, {"eta", fit.eta()}, {"gamma", fit.gamma()}}},
                      {"sigma2", fit.sigma2}});
  }
  report["layers"] = layers;
  report["global_reject"] = res.global_reject;
  report["min_p"] = res.min_p;
  report["surfaces"] = {{"mean", "surface_mean.csv"},
                        {"treatment", "surface_treatment.csv"},
                        {"carryover", "surface_carryover.csv"},
                        {"covariates", "covariate_effects.csv"},
                        {"eigenfunctions", "eigenfunctions.csv"}};
  std::ofstream o(fs::path(cfg.output_dir) / "report.json");
  o << report.dump(2) << '\n';
  return report;
}

}  // namespace prolific
