#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "circuitbench/ioi.hpp"
#include "circuitbench/runtime.hpp"

namespace circuitbench {

/// Pairs whose clean-to-corrupt gap is below this are excluded from means.
inline constexpr double kMinRecoveryGap = 1e-6;

/// logits[io] - logits[s] on an END-position logits row.
float logit_diff(std::span<const float> end_logits, TokenId io, TokenId s);

/// Same quantity from a run's final-normed last row (two dot products).
float end_logit_diff(const ModelWeights& weights, const ForwardResult& run, TokenId io, TokenId s);

/// (patched - corrupt) / (clean - corrupt); nullopt for a degenerate gap.
std::optional<double> recovery(double patched, double clean, double corrupt);

struct BaselineResult {
  std::vector<float> deltas;
  double mean_logit_diff = 0;
  double frac_correct = 0;  // fraction with delta > 0
};

/// Clean logit difference at END for every prompt (prompt-parallel).
BaselineResult baseline(const ModelWeights& weights, const std::vector<IoiPrompt>& prompts);

/// Clean and corrupt runs of one minimal pair with the activations the
/// sweeps need. Both deltas use the clean prompt's (IO, S) tokens.
struct PreparedPair {
  MinimalPair pair;
  ActivationCache clean;    // resid_pre and attn_z
  ActivationCache corrupt;  // resid_pre
  float clean_delta = 0;
  float corrupt_delta = 0;
  bool degenerate = false;
};

std::vector<PreparedPair> prepare_pairs(const ModelWeights& weights,
                                        const std::vector<MinimalPair>& pairs);

/// Delta of the corrupt run with `patches` applied, resumed from the corrupt
/// residual at the earliest patched layer.
float patched_delta(const ModelWeights& weights, const PreparedPair& prepared,
                    const PatchSet& patches);

enum class GridKind { resid, head };

struct SweepGrid {
  GridKind kind = GridKind::resid;
  std::size_t rows = 0;  // layers
  std::size_t cols = 0;  // positions (resid) or heads (head)
  std::vector<double> cells;
  std::vector<std::string> col_labels;
  std::size_t n_pairs = 0;
  std::size_t n_degenerate = 0;

  double at(std::size_t r, std::size_t c) const { return cells[r * cols + c]; }
  std::string to_csv() const;
};

/// Resid grid columns in role order: for each pair, the column of the first
/// name slot is the IO name's position and the second is the S name's, so a
/// column means the same thing for ABBA and BABA prompts.
std::vector<std::size_t> role_ordered_positions(const IoiPrompt& prompt);

/// Labels for resid grid columns: BOS, IO, S1, S2, PLACE, OBJ, END and the
/// surface form of the fixed template words.
std::vector<std::string> resid_column_labels(const BpeVocab& vocab, const IoiPrompt& prompt);

/// Clean resid_pre patched at one (layer, position) per cell.
SweepGrid resid_sweep(const ModelWeights& weights, const std::vector<PreparedPair>& pairs);

/// Clean attn_z patched at END for one (layer, head) per cell.
SweepGrid head_sweep(const ModelWeights& weights, const std::vector<PreparedPair>& pairs);

/// Mean recovery from patching a set of heads at END simultaneously.
double heads_recovery(const ModelWeights& weights, const std::vector<PreparedPair>& pairs,
                      const std::vector<std::pair<std::size_t, std::size_t>>& heads);

/// Patching every head of `layer` together vs the best single head.
struct SumCheck {
  std::size_t layer = 0;
  double all_heads = 0;
  double max_single = 0;
  bool holds = false;
};
SumCheck layer_sum_check(const ModelWeights& weights, const std::vector<PreparedPair>& pairs,
                         const SweepGrid& head_grid, std::size_t layer);

}  // namespace circuitbench
