#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "circuitbench/deployment.hpp"
#include "circuitbench/model.hpp"
#include "circuitbench/robustness.hpp"
#include "circuitbench/sae.hpp"

namespace circuitbench {

// Experiment configuration, JSON on disk. Every section and field is
// optional; omitted fields keep the defaults below. Unknown fields and
// wrong types raise ConfigError naming the dotted field path.
struct ExperimentConfig {
  std::uint64_t global_seed = 0;
  std::filesystem::path weights = "data/gpt2/model.bin";
  std::filesystem::path vocab = "data/gpt2/vocab.json";
  std::filesystem::path merges = "data/gpt2/merges.txt";
  std::filesystem::path pools = "data/pools.json";
  std::filesystem::path output_dir = "out";
  ModelConfig model;  // the shape load_weights validates against

  struct Baseline {
    std::size_t n_prompts = 64;
  } baseline;

  struct Patching {
    std::size_t n_pairs = 30;
  } patching;

  struct Sae {
    std::size_t layer = 9;
    std::size_t n_train = 2000;
    std::size_t n_heldout = 500;
    SaeTrainConfig train;  // train.seed is derived from global_seed, not read
  } sae;

  struct Analysis {
    std::size_t n_selectivity = 30;
    std::size_t top_k = 15;
    std::size_t n_ablation_prompts = 30;
    std::vector<std::size_t> cumulative_ks = {0, 1, 3, 5, 10, 15};
    std::vector<std::size_t> fve_ks = {1, 2, 3, 5, 10, 15, 20, 30, 50, 100};
    std::size_t n_stratify = 10;
    std::size_t n_paraphrases = 60;
    double firing_threshold = 1.0;
  } analysis;

  struct Robustness {
    std::size_t n_baseline = 64;
    std::size_t n_pairs = 30;
    std::size_t n_feature_prompts = 30;
    std::size_t n_dominant_prompts = 30;
    std::vector<HeadId> heads = canonical_heads();
  } robustness;

  struct Deployment {
    CostModel cost;
    MonitorSampling sampling;
    double theta_min = 0.0, theta_max = 40.0, theta_step = 0.5;
    std::vector<double> p_err_grid = {0.005, 0.02, 0.05, 0.10, 0.20};
    std::size_t n_monitor_features = 5;  // SAE rates averaged over these
    std::size_t n_roc_features = 10;     // AUC reported for these
    double compose_theta = 5.0;
  } deployment;

  /// Relative paths in the file are resolved against its directory.
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Relative paths are resolved against `base_dir` when it is non-empty.
  static ExperimentConfig from_json(const nlohmann::json& j,
                                    const std::filesystem::path& base_dir = {});
  nlohmann::json to_json() const;

  /// Cross-field checks; throws ConfigError naming the field.
  void validate() const;

  /// SHA-256 of the canonical JSON with output_dir removed: where results
  /// are written does not change them.
  std::string sha256() const;
};

/// Subcommands in pipeline order; report-all runs all others.
inline constexpr std::array<std::string_view, 15> kSubcommands = {
    "baseline",   "patch-resid",   "patch-heads",  "gen-activations", "train-sae",
    "selectivity", "ablate",       "fve",          "stratify",        "robustness",
    "monitor-roc", "compose-table", "deploy-sweep", "sensitivity",    "report-all"};

bool is_subcommand(std::string_view name);

struct ManifestEntry {
  std::string path;  // relative to the output directory, '/'-separated
  std::string sha256;
  std::uintmax_t bytes = 0;
};

/// Written last (atomically) to records/<experiment>.json; a stage whose
/// record is missing did not finish.
struct RunRecord {
  std::string experiment;
  std::string config_sha256;
  std::string version;
  std::uint64_t global_seed = 0;
  std::optional<double> wall_time_seconds;  // null under --deterministic
  std::vector<ManifestEntry> outputs;       // sorted by path

  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
};

/// Library version baked in at build time (git describe).
std::string artifact_version();

/// Exclusive claim on an output directory via <dir>/.lock, created with
/// O_EXCL and removed on destruction. A held lock raises ConfigError.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& output_dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
};

struct RunOptions {
  bool deterministic = false;  // no timestamps in SVGs, null wall time
};

/// Runs pipeline stages against one output directory. Inputs (vocabulary,
/// pools, weights) are loaded on first use and shared across stages.
class Experiment {
 public:
  Experiment(ExperimentConfig config, RunOptions options = {});
  ~Experiment();
  Experiment(const Experiment&) = delete;
  Experiment& operator=(const Experiment&) = delete;

  const ExperimentConfig& config() const noexcept;

  /// Runs one subcommand and returns its record. Missing upstream artifacts
  /// raise DependencyError naming the producing subcommand. report-all
  /// skips stages whose existing record matches the config hash and whose
  /// listed outputs are intact.
  RunRecord run(std::string_view subcommand);

  /// One line per stage that ran or was reused, for the terminal.
  const std::vector<std::string>& log() const noexcept;

 private:
  struct State;
  std::unique_ptr<State> state_;
};

/// Output file names shared by the CLI, tests and the acceptance suite.
namespace artifacts {
inline constexpr std::string_view kBaselineJson = "baseline.json";
inline constexpr std::string_view kBaselineCsv = "baseline.csv";
inline constexpr std::string_view kResidSweepCsv = "resid_sweep.csv";
inline constexpr std::string_view kResidSweepJson = "resid_sweep.json";
inline constexpr std::string_view kHeadSweepCsv = "head_sweep.csv";
inline constexpr std::string_view kHeadSweepJson = "head_sweep.json";
inline constexpr std::string_view kActivationsTrain = "activations_train.bin";
inline constexpr std::string_view kActivationsHeldout = "activations_heldout.bin";
inline constexpr std::string_view kActivationsJson = "activations.json";
inline constexpr std::string_view kSaeBin = "sae.bin";
inline constexpr std::string_view kSaeJson = "sae.json";
inline constexpr std::string_view kSaeLogCsv = "sae_training_log.csv";
inline constexpr std::string_view kSelectivityCsv = "selectivity.csv";
inline constexpr std::string_view kSelectiveJson = "selective_features.json";
inline constexpr std::string_view kAblationSingleCsv = "ablation_single.csv";
inline constexpr std::string_view kAblationCumulativeCsv = "ablation_cumulative.csv";
inline constexpr std::string_view kAblationJson = "ablation.json";
inline constexpr std::string_view kFveCsv = "fve.csv";
inline constexpr std::string_view kFveJson = "fve.json";
inline constexpr std::string_view kStratificationCsv = "stratification.csv";
inline constexpr std::string_view kStratificationJson = "stratification.json";
inline constexpr std::string_view kRobustnessJson = "robustness.json";
inline constexpr std::string_view kRobustnessSummaryCsv = "robustness_summary.csv";
inline constexpr std::string_view kRobustnessFiringCsv = "robustness_firing.csv";
inline constexpr std::string_view kRobustnessDropCsv = "robustness_drop.csv";
inline constexpr std::string_view kMonitorJson = "monitor_measurements.json";
inline constexpr std::string_view kMonitorRocCsv = "monitor_roc.csv";
inline constexpr std::string_view kCompositionCsv = "composition.csv";
inline constexpr std::string_view kCompositionJson = "composition.json";
inline constexpr std::string_view kSweepCsv = "deploy_sweep.csv";
inline constexpr std::string_view kRecommendationJson = "recommendation.json";
inline constexpr std::string_view kSensitivityCsv = "sensitivity.csv";
inline constexpr std::string_view kSensitivityJson = "sensitivity.json";
inline constexpr std::string_view kFigResid = "figures/resid_patching.svg";
inline constexpr std::string_view kFigHeads = "figures/head_patching.svg";
inline constexpr std::string_view kFigSelectivity = "figures/selectivity.svg";
inline constexpr std::string_view kFigFve = "figures/fve_curves.svg";
inline constexpr std::string_view kFigRobustness = "figures/robustness.svg";
inline constexpr std::string_view kFigCost = "figures/cost_curves.svg";
}  // namespace artifacts

}  // namespace circuitbench
