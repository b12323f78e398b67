#pragma once

#include <compare>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "circuitbench/bpe.hpp"
#include "circuitbench/model.hpp"
#include "circuitbench/tensor.hpp"

namespace circuitbench {

enum class SiteKind : std::uint8_t { resid_pre, resid_post, attn_z };

inline constexpr std::size_t kAllPositions = std::numeric_limits<std::size_t>::max();

/// A hookable activation. `head` is used only by attn_z sites.
struct HookSite {
  SiteKind kind = SiteKind::resid_pre;
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t position = kAllPositions;

  static HookSite resid_pre(std::size_t layer, std::size_t position = kAllPositions) {
    return {SiteKind::resid_pre, layer, 0, position};
  }
  static HookSite resid_post(std::size_t layer, std::size_t position = kAllPositions) {
    return {SiteKind::resid_post, layer, 0, position};
  }
  static HookSite attn_z(std::size_t layer, std::size_t head,
                         std::size_t position = kAllPositions) {
    return {SiteKind::attn_z, layer, head, position};
  }

  auto operator<=>(const HookSite&) const = default;
};

std::string to_string(const HookSite& site);

/// Which site kinds a forward pass records.
struct CaptureSet {
  bool resid_pre = false;
  bool resid_post = false;
  bool attn_z = false;

  static CaptureSet all() { return {true, true, true}; }
};

/// Activations recorded by one forward pass. Full-sequence tensors are stored
/// per (kind, layer, head); position-resolved lookups slice a row.
class ActivationCache {
 public:
  std::size_t seq_len() const noexcept { return seq_len_; }

  bool contains(SiteKind kind, std::size_t layer, std::size_t head = 0) const;

  /// Full [seq × width] tensor. resid_post at layer l < last is served from
  /// resid_pre at l + 1 when only that was captured.
  const Tensor& get(SiteKind kind, std::size_t layer, std::size_t head = 0) const;

  /// Value at a site: one row ([width]) or the full tensor for kAllPositions.
  Tensor at(const HookSite& site) const;

  std::size_t stored_tensor_count() const noexcept { return store_.size(); }

  void set_seq_len(std::size_t n) noexcept { seq_len_ = n; }
  void put(SiteKind kind, std::size_t layer, std::size_t head, Tensor value);

 private:
  using Key = std::tuple<SiteKind, std::size_t, std::size_t>;
  std::map<Key, Tensor> store_;
  std::size_t seq_len_ = 0;
};

/// Replacement activations applied during a forward pass.
class PatchSet {
 public:
  struct Patch {
    HookSite site;
    Tensor value;
  };

  /// Throws on a duplicate site.
  PatchSet& add(const HookSite& site, Tensor value);

  const std::vector<Patch>& patches() const noexcept { return patches_; }
  bool empty() const noexcept { return patches_.empty(); }

  /// Smallest layer touched by any patch.
  std::optional<std::size_t> earliest_layer() const;

 private:
  std::vector<Patch> patches_;
};

enum class LogitMode { all_positions, last_position, none };

struct ForwardOptions {
  CaptureSet capture;
  const PatchSet* patches = nullptr;
  LogitMode logits = LogitMode::all_positions;
  /// Stop after this layer's block; no final norm or logits are computed.
  std::optional<std::size_t> stop_after_layer;
};

struct ForwardResult {
  Tensor logits;              // [seq×V], [1×V] or empty, per LogitMode
  ActivationCache cache;
  Tensor residual;            // residual after the last executed block [seq×D]
  std::vector<float> final_normed_last;  // ln_f(residual[last]) when the run completed
};

/// Full forward pass from token ids.
ForwardResult run_forward(const ModelWeights& weights, std::span<const TokenId> tokens,
                          const ForwardOptions& options);

/// Continues a forward pass from the residual stream entering `start_layer`
/// (i.e. resid_pre at that layer for every position). Patches must not
/// target earlier layers.
ForwardResult resume_forward(const ModelWeights& weights, Tensor resid_pre, std::size_t start_layer,
                             const ForwardOptions& options);

/// forward(weights, tokens, capture) -> logits at every position plus cache.
ForwardResult forward(const ModelWeights& weights, std::span<const TokenId> tokens,
                      const CaptureSet& capture = {});

/// Logits at every position with `patches` applied.
Tensor forward_with_patches(const ModelWeights& weights, std::span<const TokenId> tokens,
                            const PatchSet& patches);

/// Logit of `token` given a final-layer-normed row: dot(row, wte[token]).
float unembed(const ModelWeights& weights, std::span<const float> normed_row, TokenId token);

}  // namespace circuitbench
