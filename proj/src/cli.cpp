#include "circuitbench/cli.hpp"

#include <omp.h>

#include <charconv>
#include <cstdlib>
#include <cstring>
#include <ostream>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "circuitbench/error.hpp"
#include "circuitbench/experiment.hpp"

namespace circuitbench {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDependency = 3;
constexpr int kExitNumeric = 4;

const char* describe(std::string_view name) {
  if (name == "baseline") return "clean logit difference on seeded in-distribution prompts";
  if (name == "patch-resid") return "residual stream patching over (layer, position)";
  if (name == "patch-heads") return "attention head output patching at END over (layer, head)";
  if (name == "gen-activations") return "collect SAE training and held-out activations";
  if (name == "train-sae") return "train the sparse autoencoder";
  if (name == "selectivity") return "per-name selectivity table and top selective features";
  if (name == "ablate") return "single and cumulative feature ablation";
  if (name == "fve") return "variance explained by the top-K features";
  if (name == "stratify") return "feature observables vs causal drop under paraphrase";
  if (name == "robustness") return "baseline, head recovery and features under distribution shift";
  if (name == "monitor-roc") return "feature-as-monitor measurements and ROC AUC";
  if (name == "compose-table") return "SAE/heuristic composition rates per condition";
  if (name == "deploy-sweep") return "expected-cost sweep over configurations and thresholds";
  if (name == "sensitivity") return "optimal configuration across error prevalence";
  return "run every stage (reusing up-to-date ones) and render all figures";
}

// 0 when the variable is unset.
int threads_from_env() {
  const char* value = std::getenv("CIRCUITBENCH_THREADS");
  if (value == nullptr || *value == '\0') return 0;
  int n = 0;
  const auto [end, ec] = std::from_chars(value, value + std::strlen(value), n);
  if (ec != std::errc{} || *end != '\0' || n < 1) {
    throw ConfigError(fmt::format("CIRCUITBENCH_THREADS: expected a positive integer, got '{}'", value));
  }
  return n;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"circuitbench: circuit analysis workbench for GPT-2 small on indirect object identification"};
  app.name("circuitbench");
  app.require_subcommand(1, 1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  bool deterministic = false;
  int threads = 0;
  auto* seed_opt = app.add_option("--seed", seed, "override global_seed");
  app.add_option("--config", config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "override output_dir");
  app.add_flag("--deterministic", deterministic,
               "omit timestamps from figures and wall time from run records");
  auto* threads_opt = app.add_option("--threads", threads,
                                     "worker threads (default: $CIRCUITBENCH_THREADS, else OpenMP's)")
                          ->check(CLI::PositiveNumber);
  for (auto name : kSubcommands) {
    app.add_subcommand(std::string(name), describe(name))->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }

  const std::string subcommand = app.get_subcommands().front()->get_name();
  try {
    auto config = config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(config_path);
    if (seed_opt->count() > 0) config.global_seed = seed;
    if (!out_dir.empty()) config.output_dir = out_dir;
    if (threads_opt->count() == 0) threads = threads_from_env();
    if (threads > 0) omp_set_num_threads(threads);

    Experiment experiment(config, RunOptions{deterministic});
    OutputLock lock(experiment.config().output_dir);
    const auto record = experiment.run(subcommand);
    for (const auto& line : experiment.log()) out << line << '\n';
    out << fmt::format("{} outputs recorded in {}\n", record.outputs.size(),
                       (experiment.config().output_dir / "records" / (subcommand + ".json")).string());
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DependencyError& e) {
    err << "missing dependency: " << e.what() << '\n';
    return kExitDependency;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace circuitbench
