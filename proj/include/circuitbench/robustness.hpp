#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "circuitbench/feature_analysis.hpp"
#include "circuitbench/ioi.hpp"
#include "circuitbench/patching.hpp"
#include "circuitbench/sae.hpp"

namespace circuitbench {

enum class ShiftKind { in_distribution, ood_content, heldout_names, reformulated_frame };

std::string to_string(ShiftKind kind);
ShiftKind shift_kind_from_string(const std::string& s);

/// Which pools and frame a shift samples from.
struct ShiftSpec {
  ShiftKind kind = ShiftKind::in_distribution;
  PoolVariant variant = PoolVariant::in_dist;
  Frame frame = Frame::canonical;

  static ShiftSpec of(ShiftKind kind);
};

using HeadId = std::pair<std::size_t, std::size_t>;  // (layer, head)

/// Name mover and backup heads tracked across shifts: L9H9, L9H6, L10H0, L10H7.
std::vector<HeadId> canonical_heads();

struct RobustnessOptions {
  std::size_t sae_layer = 9;
  std::size_t n_baseline = 64;
  std::size_t n_pairs = 30;
  std::size_t n_feature_prompts = 30;  // IO-role prompts per tracked feature
  std::size_t n_dominant_prompts = 30; // IO-role prompts per name for the dominant map
  double firing_threshold = 1.0;
  std::vector<HeadId> heads = canonical_heads();
};

struct HeadRecovery {
  HeadId head;
  double recovery = 0;
};

struct FeatureShift {
  SelectiveFeature feature;
  FeatureProbe probe;  // on prompts where the feature's name is IO
};

struct DominantFeatures {
  std::vector<std::pair<std::string, std::size_t>> dominant;  // name -> feature
  std::vector<std::string> excluded;  // names that are not a single token
};

struct ShiftReport {
  ShiftSpec shift;
  std::string run_id;
  double baseline_mean = 0;
  double baseline_frac_correct = 0;
  std::size_t n_baseline = 0;
  std::size_t n_pairs = 0;
  std::size_t n_degenerate = 0;
  std::vector<HeadRecovery> heads;
  std::vector<FeatureShift> features;  // empty under held-out names
  DominantFeatures names;              // the shift's own name pool
  DominantFeatures probe_names;        // multi-token probes; held-out names only
  // Names whose dominant feature is one of the tracked features.
  std::size_t dominant_in_tracked = 0;

  double recovery_of(HeadId head) const;
};

/// Highest-mean-activation feature per name on seeded IO-role prompts from
/// `variant`/`frame`. Multi-token names are excluded and listed.
DominantFeatures dominant_feature_map(const SaeParams& sae, const ModelWeights& weights,
                                      const BpeVocab& vocab, const WordPools& pools,
                                      const std::vector<std::string>& names, PoolVariant variant,
                                      Frame frame, std::size_t sae_layer, std::uint64_t seed,
                                      std::size_t n_prompts);

/// Baseline, head recoveries, feature firing/ablation and (for held-out names)
/// the dominant-feature map on one shifted distribution. The SAE and feature
/// list come from the in-distribution run and are never refit.
ShiftReport run_shift(const ShiftSpec& shift, const ModelWeights& weights, const SaeParams& sae,
                      const BpeVocab& vocab, const WordPools& pools,
                      const std::vector<SelectiveFeature>& tracked, std::uint64_t seed,
                      const RobustnessOptions& options = {});

struct Retention {
  SelectiveFeature feature;
  double firing_retention = 0;  // shifted / in-dist mean activation
  double causal_retention = 0;  // shifted / in-dist ablation drop
  bool flagged = false;         // in-dist drop below the guard; excluded from the causal mean
};

struct RetentionSummary {
  std::vector<Retention> rows;
  double mean_firing_retention = 0;
  double mean_causal_retention = 0;
  std::size_t n_flagged = 0;
  std::size_t n_lost_half = 0;  // unflagged features with causal retention ≤ 0.5
};

inline constexpr double kMinRetentionDrop = 0.05;

/// Per-feature retention of firing magnitude and causal drop from `reference`
/// to `shifted`; features are matched by id.
RetentionSummary detection_vs_causal_gap(const ShiftReport& reference, const ShiftReport& shifted,
                                         double min_drop = kMinRetentionDrop);

nlohmann::json to_json(const ShiftReport& report);
nlohmann::json to_json(const RetentionSummary& summary);

/// Comparison tables behind the robustness figure.
std::string shift_summary_csv(const std::vector<ShiftReport>& reports);
std::string feature_firing_csv(const std::vector<ShiftReport>& reports);
std::string feature_drop_csv(const std::vector<ShiftReport>& reports);

}  // namespace circuitbench
