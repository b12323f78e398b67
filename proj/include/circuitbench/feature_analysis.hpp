#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "circuitbench/ioi.hpp"
#include "circuitbench/runtime.hpp"
#include "circuitbench/sae.hpp"

namespace circuitbench {

// The SAE reads the residual stream after block `sae_layer` (resid_post) at
// the END position; ablations edit that vector and resume at sae_layer + 1.

/// Residual stream after block `sae_layer` for every position of `prompt`.
Tensor site_residual(const ModelWeights& weights, const IoiPrompt& prompt, std::size_t sae_layer);

/// END-position SAE-site activations for every prompt -> [n × d_model].
Tensor collect_activations(const ModelWeights& weights, const std::vector<IoiPrompt>& prompts,
                           std::size_t sae_layer);

/// Logit difference after resuming from a (possibly edited) site residual.
float delta_from_site(const ModelWeights& weights, const IoiPrompt& prompt, Tensor residual,
                      std::size_t sae_layer);

/// h - Σ_{i ∈ features} f_i(h) · direction_i; the SAE's reconstruction error
/// stays in place.
std::vector<float> ablate_vector(const SaeParams& sae, std::span<const float> h,
                                 const std::vector<std::size_t>& features);

struct SelectivityTable {
  std::vector<std::string> names;
  std::size_t n_per_condition = 0;
  Tensor mean_io;  // [names × d_sae]: mean activation when the name is IO
  Tensor mean_s;   // [names × d_sae]: mean activation when the name is S
  std::vector<std::size_t> top_feature;  // per name, argmax of mean_io - mean_s
  std::vector<double> top_gap;

  double gap(std::size_t name, std::size_t feature) const {
    return static_cast<double>(mean_io(name, feature)) - mean_s(name, feature);
  }
  std::string to_csv() const;
};

/// Conditional feature means for each name over `n_per_condition` seeded
/// IO-role and S-role prompts.
SelectivityTable selectivity_table(const SaeParams& sae, const ModelWeights& weights,
                                   const BpeVocab& vocab, const WordPools& pools,
                                   std::size_t sae_layer, std::uint64_t seed,
                                   std::size_t n_per_condition = 30);

struct SelectiveFeature {
  std::string name;
  std::size_t feature = 0;
  double gap = 0;
  double mean_io = 0;
  double mean_s = 0;
};

/// Each name's top feature ranked by gap (descending), first k kept. A feature
/// that tops several names is kept once, under its largest-gap name.
std::vector<SelectiveFeature> top_selective(const SelectivityTable& table, std::size_t k);

struct AblationResult {
  std::vector<std::size_t> features;
  std::vector<float> before, after;  // per prompt
  double mean_before = 0, mean_after = 0;
  double frac_correct = 0;  // after ablation
  // Prompts whose IO name is one of `preferred_names` vs the rest.
  std::size_t n_preferred = 0, n_other = 0;
  double mean_drop_preferred = 0;   // mean(before - after) on preferred prompts
  double mean_change_other = 0;     // mean(after - before) on the others
};

AblationResult ablate_features(const SaeParams& sae, const ModelWeights& weights,
                               const std::vector<std::size_t>& features,
                               const std::vector<IoiPrompt>& prompts, std::size_t sae_layer,
                               const std::vector<std::string>& preferred_names = {});

/// One feature on one prompt set: activation statistics at END and the
/// effect of ablating it.
struct FeatureProbe {
  std::size_t n = 0;
  double mean_act = 0, std_act = 0, max_act = 0;
  double firing_rate = 0;  // fraction with activation > threshold
  double mean_drop = 0;    // mean(before - after) when the feature is ablated
};
FeatureProbe probe_feature(const SaeParams& sae, const ModelWeights& weights, std::size_t feature,
                           const std::vector<IoiPrompt>& prompts, std::size_t sae_layer,
                           double firing_threshold = 1.0);

struct SingleAblation {
  SelectiveFeature feature;
  double drop_preferred = 0;
  double change_other = 0;
};

/// For each feature: drop on prompts where its name is IO and change on
/// prompts not mentioning the name.
std::vector<SingleAblation> single_feature_ablations(const SaeParams& sae, const ModelWeights& weights,
                                                     const BpeVocab& vocab, const WordPools& pools,
                                                     const std::vector<SelectiveFeature>& features,
                                                     std::size_t sae_layer, std::uint64_t seed,
                                                     std::size_t n_prompts = 30);

struct CumulativeRow {
  std::size_t k = 0;
  double mean_delta = 0;
  double frac_correct = 0;
  double mean_delta_preferred = 0;  // prompts whose IO owns an ablated feature
  double mean_delta_other = 0;
  std::size_t n_preferred = 0;
};

/// Ablates the top-k features together for every k.
std::vector<CumulativeRow> cumulative_ablation(const SaeParams& sae, const ModelWeights& weights,
                                               const std::vector<SelectiveFeature>& features,
                                               const std::vector<std::size_t>& ks,
                                               const std::vector<IoiPrompt>& prompts,
                                               std::size_t sae_layer);

struct FveRow {
  std::size_t k = 0;
  double by_magnitude = 0;   // top-k features per input
  double selective_only = 0; // top-k per input among the selective list
};

/// FVE after keeping only the K largest features per input.
std::vector<FveRow> fve_curve(const SaeParams& sae, const Tensor& dataset,
                              const std::vector<std::size_t>& ks,
                              const std::vector<std::size_t>& selective);

/// Reconstruction keeping, per row, the k largest features among `allowed`
/// (all features when empty).
Tensor truncated_reconstruction(const SaeParams& sae, const Tensor& features, std::size_t k,
                                const std::vector<std::size_t>& allowed = {});

struct StratificationRow {
  SelectiveFeature feature;
  double firing_rate = 0;
  double cv = 0;
  double selectivity_ratio = 0;      // mean_io / max(mean_s, 0.1)
  double selectivity_ratio_raw = 0;  // mean_io / mean_s (inf when mean_s = 0)
  double peak_to_mean = 0;
  double causal_drop = 0;
};

struct Stratification {
  std::vector<StratificationRow> rows;
  double pearson_r = 0;
  std::string to_csv() const;
};

/// Observables over each feature's paraphrase set and their correlation with
/// the causal drop.
Stratification stratify(const SaeParams& sae, const ModelWeights& weights, const BpeVocab& vocab,
                        const WordPools& pools, const std::vector<SelectiveFeature>& features,
                        std::size_t sae_layer, std::uint64_t seed, std::size_t n_paraphrases = 60,
                        double firing_threshold = 1.0);

/// Guard used for the selectivity ratio denominator.
inline constexpr double kSelectivityEpsilon = 0.1;

/// Product-moment correlation with f64 accumulation. Throws NumericError for
/// fewer than 3 points or zero variance.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace circuitbench
