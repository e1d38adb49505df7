#include <omp.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "prolific/errors.hpp"
#include "prolific/harness.hpp"

namespace fs = std::filesystem;
using namespace prolific;

namespace {

struct Flags {
  std::string config;
  std::string out;
  long long seed = -1;
  int threads = 0;
  std::string data;
};

int resolve_threads(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("PROLIFIC_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 0;
}

ExperimentConfig load_config(const Flags& f, const std::string& experiment) {
  KeyValueConfig kv = f.config.empty() ? KeyValueConfig() : KeyValueConfig::load(f.config);
  if (!f.data.empty()) kv.set("dataset", f.data);
  ExperimentConfig cfg = experiment_config_from(kv, experiment);
  if (f.seed >= 0) {
    cfg.master_seed = static_cast<std::uint64_t>(f.seed);
    cfg.sim.seed = static_cast<std::uint64_t>(f.seed);
    cfg.prolific.seed = static_cast<std::uint64_t>(f.seed);
  }
  if (!f.out.empty()) cfg.output_dir = f.out;
  cfg.threads = resolve_threads(f.threads);
  if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
  return cfg;
}

Progress progress_printer(const ExperimentConfig& cfg) {
  if (cfg.quiet) return {};
  return [](int done, int total) {
    if (done == total || done % 10 == 0) std::fprintf(stderr, "\r  %d/%d replicates", done, total);
    if (done == total) std::fprintf(stderr, "\n");
  };
}

int cmd_simulate(const Flags& f) {
  ExperimentConfig cfg = load_config(f, "simulate");
  const std::string path = f.out.empty() ? "simulated.csv" : f.out;
  FunctionalCrossoverDataset ds = generate_dataset(cfg.sim);
  save_dataset(ds, path);
  std::printf("wrote %zu subjects, %zu curves to %s\n", ds.subjects.size(), ds.curve_count(), path.c_str());
  return 0;
}

int cmd_size(const Flags& f) {
  ExperimentConfig cfg = load_config(f, "size");
  auto rows = experiment_size(cfg, progress_printer(cfg));
  std::printf("%-11s %5s %6s %6s %8s %8s %6s\n", "method", "n", "alpha", "alpha1", "size", "se", "reps");
  for (const auto& r : rows)
    std::printf("%-11s %5d %6.3f %6.3f %8.4f %8.4f %6d\n", r.method.c_str(), r.n, r.alpha, r.alpha1,
                r.empirical_size, r.mc_se, r.reps);
  std::printf("tables in %s\n", cfg.output_dir.c_str());
  return 0;
}

int cmd_power(const Flags& f) {
  ExperimentConfig cfg = load_config(f, "power");
  auto rows = experiment_power(cfg, progress_printer(cfg));
  std::printf("%-11s %5s %8s %6s %6s %8s %8s\n", "method", "n", "delta", "gamma", "alpha1", "power", "se");
  for (const auto& r : rows)
    std::printf("%-11s %5d %8.4g %6.3g %6.3f %8.4f %8.4f\n", r.method.c_str(), r.n, r.delta, r.gamma_rel, r.alpha1,
                r.power, r.mc_se);
  std::printf("tables in %s\n", cfg.output_dir.c_str());
  return 0;
}

int cmd_analyze(const Flags& f) {
  ExperimentConfig cfg = load_config(f, "analyze");
  auto report = analyze(cfg);
  std::printf("K = %d, global_reject = %s, min p = %.4g\n", report["K"].get<int>(),
              report["global_reject"].get<bool>() ? "true" : "false", report["min_p"].get<double>());
  for (const auto& l : report["layers"])
    std::printf("  layer %d: stage1 p = %.4g, branch %s, stage2 p = %.4g\n", l["k"].get<int>(),
                l["stage1_p"].get<double>(), l["stage2_branch"].get<std::string>().c_str(),
                l["stage2_p"].get<double>());
  std::printf("report in %s\n", (fs::path(cfg.output_dir) / "report.json").string().c_str());
  return 0;
}

int cmd_selftest(const Flags& f) {
  Flags g = f;
  g.config.clear();
  const fs::path dir = f.out.empty() ? fs::temp_directory_path() / "prolific_selftest" : fs::path(f.out);
  fs::create_directories(dir);
  KeyValueConfig kv;
  ExperimentConfig cfg = experiment_config_from(kv, "simulate");
  cfg.sim.n = 24;
  cfg.sim.delta = 1.5;
  cfg.sim.seed = f.seed >= 0 ? static_cast<std::uint64_t>(f.seed) : 7;
  const std::string csv = (dir / "selftest.csv").string();
  save_dataset(generate_dataset(cfg.sim), csv);

  KeyValueConfig akv;
  akv.set("dataset", csv);
  akv.set("nsim", "300");
  akv.set("pve", "0.9");
  akv.set("output_dir", (dir / "report").string());
  ExperimentConfig acfg = experiment_config_from(akv, "analyze");
  acfg.prolific.seed = cfg.sim.seed;
  acfg.threads = resolve_threads(f.threads);
  if (acfg.threads > 0) omp_set_num_threads(acfg.threads);
  auto report = analyze(acfg);
  const bool ok = report["K"].get<int>() >= 1 && report["layers"].size() == report["K"].get<std::size_t>();
  std::printf("selftest %s: K = %d, min p = %.4g, global_reject = %s\n", ok ? "ok" : "FAILED",
              report["K"].get<int>(), report["min_p"].get<double>(),
              report["global_reject"].get<bool>() ? "true" : "false");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage projection tests for longitudinal functional crossover data"};
  app.require_subcommand(1);
  Flags flags;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "key = value config file");
    sub->add_option("--seed", flags.seed, "master seed");
    sub->add_option("--threads", flags.threads, "worker threads (default: PROLIFIC_THREADS or OpenMP default)");
    sub->add_option("--out", flags.out, "output directory (simulate: CSV path)");
  };
  auto* sim = app.add_subcommand("simulate", "write a simulated dataset as CSV");
  auto* size = app.add_subcommand("size", "empirical size table");
  auto* power = app.add_subcommand("power", "power curves over a delta grid");
  auto* an = app.add_subcommand("analyze", "run the test on a CSV dataset");
  auto* self = app.add_subcommand("selftest", "small end-to-end smoke run");
  for (auto* s : {sim, size, power, an, self}) common(s);
  an->add_option("--data", flags.data, "dataset CSV (overrides the config key)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*sim) return cmd_simulate(flags);
    if (*size) return cmd_size(flags);
    if (*power) return cmd_power(flags);
    if (*an) return cmd_analyze(flags);
    if (*self) return cmd_selftest(flags);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const SchemaError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 2;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 2;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
