#include "circuitbench/runtime.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "circuitbench/error.hpp"
#include "circuitbench/kernels.hpp"

namespace circuitbench {

std::string to_string(const HookSite& site) {
  const char* kind = site.kind == SiteKind::resid_pre    ? "resid_pre"
                     : site.kind == SiteKind::resid_post ? "resid_post"
                                                         : "attn_z";
  std::string s = fmt::format("{}.{}", kind, site.layer);
  if (site.kind == SiteKind::attn_z) {
    s += fmt::format(".h{}", site.head);
  }
  if (site.position != kAllPositions) {
    s += fmt::format("@{}", site.position);
  }
  return s;
}

// ---------------------------------------------------------------------------
// ActivationCache

bool ActivationCache::contains(SiteKind kind, std::size_t layer, std::size_t head) const {
  if (store_.contains({kind, layer, kind == SiteKind::attn_z ? head : 0})) {
    return true;
  }
  return kind == SiteKind::resid_post && store_.contains({SiteKind::resid_pre, layer + 1, 0});
}

const Tensor& ActivationCache::get(SiteKind kind, std::size_t layer, std::size_t head) const {
  const Key key{kind, layer, kind == SiteKind::attn_z ? head : 0};
  if (auto it = store_.find(key); it != store_.end()) {
    return it->second;
  }
  if (kind == SiteKind::resid_post) {
    if (auto it = store_.find({SiteKind::resid_pre, layer + 1, 0}); it != store_.end()) {
      return it->second;
    }
  }
  throw Error("activation not in cache: " + to_string(HookSite{kind, layer, head, kAllPositions}));
}

Tensor ActivationCache::at(const HookSite& site) const {
  const Tensor& full = get(site.kind, site.layer, site.head);
  if (site.position == kAllPositions) {
    return full;
  }
  if (site.position >= full.dim(0)) {
    throw Error("position out of range for " + to_string(site));
  }
  auto r = full.row(site.position);
  return Tensor({r.size()}, std::vector<float>(r.begin(), r.end()));
}

void ActivationCache::put(SiteKind kind, std::size_t layer, std::size_t head, Tensor value) {
  store_[{kind, layer, kind == SiteKind::attn_z ? head : 0}] = std::move(value);
}

// ---------------------------------------------------------------------------
// PatchSet

PatchSet& PatchSet::add(const HookSite& site, Tensor value) {
  HookSite normalized = site;
  if (normalized.kind != SiteKind::attn_z) {
    normalized.head = 0;
  }
  for (const auto& p : patches_) {
    if (p.site == normalized) {
      throw Error("duplicate patch site " + to_string(site));
    }
  }
  patches_.push_back({normalized, std::move(value)});
  return *this;
}

std::optional<std::size_t> PatchSet::earliest_layer() const {
  std::optional<std::size_t> best;
  for (const auto& p : patches_) {
    if (!best || p.site.layer < *best) {
      best = p.site.layer;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Forward pass

namespace {

void validate_patches(const ModelConfig& cfg, std::size_t seq, std::size_t start_layer,
                      const PatchSet* patches) {
  if (patches == nullptr) {
    return;
  }
  for (const auto& [site, value] : patches->patches()) {
    const std::string name = to_string(site);
    if (site.layer >= cfg.n_layer) {
      throw ShapeError("patch layer out of range: " + name);
    }
    if (site.layer < start_layer) {
      throw Error(fmt::format("patch {} precedes resume layer {}", name, start_layer));
    }
    if (site.kind == SiteKind::attn_z && site.head >= cfg.n_head) {
      throw ShapeError("patch head out of range: " + name);
    }
    const std::size_t width = site.kind == SiteKind::attn_z ? cfg.d_head() : cfg.d_model;
    if (site.position == kAllPositions) {
      if (value.shape() != Shape{seq, width}) {
        throw ShapeError(fmt::format("patch {} has shape {}, expected {}", name,
                                     shape_string(value.shape()), shape_string({seq, width})));
      }
    } else {
      if (site.position >= seq) {
        throw ShapeError("patch position out of range: " + name);
      }
      if (value.size() != width) {
        throw ShapeError(fmt::format("patch {} has {} values, expected {}", name, value.size(),
                                     width));
      }
    }
  }
}

void apply_patches(const PatchSet* patches, SiteKind kind, std::size_t layer, std::size_t head,
                   Tensor& target) {
  if (patches == nullptr) {
    return;
  }
  for (const auto& [site, value] : patches->patches()) {
    if (site.kind != kind || site.layer != layer || (kind == SiteKind::attn_z && site.head != head)) {
      continue;
    }
    if (site.position == kAllPositions) {
      std::copy(value.data().begin(), value.data().end(), target.data().begin());
    } else {
      auto row = target.row(site.position);
      std::copy(value.data().begin(), value.data().end(), row.begin());
    }
  }
}

/// Causal self-attention for one head; returns z [seq×d_head].
Tensor attention_head(const Tensor& qkv, std::size_t head, const ModelConfig& cfg) {
  const std::size_t seq = qkv.dim(0);
  const std::size_t d = cfg.d_model;
  const std::size_t dh = cfg.d_head();
  const float scale = std::sqrt(static_cast<float>(dh));
  const float* base = qkv.data().data();
  const std::size_t stride = 3 * d;
  const std::size_t q_off = head * dh;
  const std::size_t k_off = d + head * dh;
  const std::size_t v_off = 2 * d + head * dh;

  Tensor z({seq, dh});
  std::vector<float> weights(seq);
  for (std::size_t i = 0; i < seq; ++i) {
    const float* q = base + i * stride + q_off;
    float mx = -INFINITY;
    for (std::size_t j = 0; j <= i; ++j) {
      weights[j] = kernels::dot(q, base + j * stride + k_off, dh) / scale;
      mx = std::max(mx, weights[j]);
    }
    float sum = 0.0f;
    for (std::size_t j = 0; j <= i; ++j) {
      weights[j] = std::exp(weights[j] - mx);
      sum += weights[j];
    }
    float* out = z.row(i).data();
    for (std::size_t j = 0; j <= i; ++j) {
      const float p = weights[j] / sum;
      const float* v = base + j * stride + v_off;
      for (std::size_t c = 0; c < dh; ++c) {
        out[c] += p * v[c];
      }
    }
  }
  return z;
}

void add_inplace(Tensor& acc, const Tensor& delta) {
  auto a = acc.data();
  auto b = delta.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] += b[i];
  }
}

ForwardResult run_blocks(const ModelWeights& w, Tensor resid, std::size_t start_layer,
                         const ForwardOptions& opt) {
  const ModelConfig& cfg = w.config;
  const std::size_t seq = resid.dim(0);
  const std::size_t last_layer =
      opt.stop_after_layer ? std::min(*opt.stop_after_layer, cfg.n_layer - 1) : cfg.n_layer - 1;
  if (opt.stop_after_layer && *opt.stop_after_layer >= cfg.n_layer) {
    throw Error("stop_after_layer out of range");
  }
  validate_patches(cfg, seq, start_layer, opt.patches);

  ForwardResult result;
  result.cache.set_seq_len(seq);
  const std::size_t dh = cfg.d_head();

  for (std::size_t l = start_layer; l <= last_layer && l < cfg.n_layer; ++l) {
    const LayerWeights& lw = w.layers[l];
    apply_patches(opt.patches, SiteKind::resid_pre, l, 0, resid);
    if (opt.capture.resid_pre) {
      result.cache.put(SiteKind::resid_pre, l, 0, resid);
    }

    const Tensor qkv = linear(layer_norm(resid, lw.ln1_g, lw.ln1_b, cfg.ln_eps), lw.attn_w, lw.attn_b);
    Tensor z_cat({seq, cfg.d_model});
    for (std::size_t h = 0; h < cfg.n_head; ++h) {
      Tensor z = attention_head(qkv, h, cfg);
      apply_patches(opt.patches, SiteKind::attn_z, l, h, z);
      for (std::size_t i = 0; i < seq; ++i) {
        auto src = z.row(i);
        std::copy(src.begin(), src.end(), z_cat.row(i).begin() + static_cast<std::ptrdiff_t>(h * dh));
      }
      if (opt.capture.attn_z) {
        result.cache.put(SiteKind::attn_z, l, h, std::move(z));
      }
    }
    add_inplace(resid, linear(z_cat, lw.proj_w, lw.proj_b));

    const Tensor hidden = gelu(linear(layer_norm(resid, lw.ln2_g, lw.ln2_b, cfg.ln_eps), lw.fc_w, lw.fc_b));
    add_inplace(resid, linear(hidden, lw.out_w, lw.out_b));

    apply_patches(opt.patches, SiteKind::resid_post, l, 0, resid);
    require_finite(resid.data(), fmt::format("residual stream after layer {}", l));
    if (opt.capture.resid_post && (l == last_layer || !opt.capture.resid_pre)) {
      result.cache.put(SiteKind::resid_post, l, 0, resid);
    }
  }

  if (!opt.stop_after_layer) {
    const std::size_t d = cfg.d_model;
    const std::size_t vocab = cfg.d_vocab;
    const float* wte = w.wte.data().data();
    if (opt.logits == LogitMode::all_positions) {
      const Tensor normed = layer_norm(resid, w.lnf_g, w.lnf_b, cfg.ln_eps);
      result.logits = Tensor({seq, vocab});
      float* out = result.logits.data().data();
      const float* x = normed.data().data();
#pragma omp parallel for schedule(static)
      for (std::size_t v = 0; v < vocab; ++v) {
        for (std::size_t i = 0; i < seq; ++i) {
          out[i * vocab + v] = kernels::dot(x + i * d, wte + v * d, d);
        }
      }
      auto last = normed.row(seq - 1);
      result.final_normed_last.assign(last.begin(), last.end());
    } else {
      auto last_row = resid.row(seq - 1);
      const Tensor last({1, d}, std::vector<float>(last_row.begin(), last_row.end()));
      const Tensor normed = layer_norm(last, w.lnf_g, w.lnf_b, cfg.ln_eps);
      result.final_normed_last.assign(normed.data().begin(), normed.data().end());
      if (opt.logits == LogitMode::last_position) {
        result.logits = Tensor({1, vocab});
        float* out = result.logits.data().data();
        const float* x = normed.data().data();
#pragma omp parallel for schedule(static)
        for (std::size_t v = 0; v < vocab; ++v) {
          out[v] = kernels::dot(x, wte + v * d, d);
        }
      }
    }
    require_finite(result.logits.data(), "logits");
  }
  result.residual = std::move(resid);
  return result;
}

}  // namespace

ForwardResult run_forward(const ModelWeights& w, std::span<const TokenId> tokens,
                          const ForwardOptions& options) {
  const ModelConfig& cfg = w.config;
  if (tokens.empty() || tokens.size() > cfg.n_ctx) {
    throw Error(fmt::format("sequence length {} outside [1, {}]", tokens.size(), cfg.n_ctx));
  }
  const std::size_t d = cfg.d_model;
  Tensor resid({tokens.size(), d});
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const TokenId t = tokens[i];
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.d_vocab) {
      throw Error(fmt::format("token id {} out of range at position {}", t, i));
    }
    auto tok = w.wte.row(static_cast<std::size_t>(t));
    auto pos = w.wpe.row(i);
    auto out = resid.row(i);
    for (std::size_t c = 0; c < d; ++c) {
      out[c] = tok[c] + pos[c];
    }
  }
  return run_blocks(w, std::move(resid), 0, options);
}

ForwardResult resume_forward(const ModelWeights& w, Tensor resid_pre, std::size_t start_layer,
                             const ForwardOptions& options) {
  if (resid_pre.rank() != 2 || resid_pre.dim(1) != w.config.d_model || resid_pre.dim(0) == 0) {
    throw ShapeError("resume_forward: residual must be [seq x d_model]");
  }
  if (start_layer > w.config.n_layer) {
    throw Error("resume_forward: start layer out of range");
  }
  return run_blocks(w, std::move(resid_pre), start_layer, options);
}

ForwardResult forward(const ModelWeights& w, std::span<const TokenId> tokens,
                      const CaptureSet& capture) {
  ForwardOptions opt;
  opt.capture = capture;
  return run_forward(w, tokens, opt);
}

Tensor forward_with_patches(const ModelWeights& w, std::span<const TokenId> tokens,
                            const PatchSet& patches) {
  ForwardOptions opt;
  opt.patches = &patches;
  return run_forward(w, tokens, opt).logits;
}

float unembed(const ModelWeights& w, std::span<const float> normed_row, TokenId token) {
  if (token < 0 || static_cast<std::size_t>(token) >= w.config.d_vocab) {
    throw Error(fmt::format("token id {} out of range", token));
  }
  if (normed_row.size() != w.config.d_model) {
    throw ShapeError("unembed: row width mismatch");
  }
  return kernels::dot(normed_row.data(), w.wte.row(static_cast<std::size_t>(token)).data(),
                      w.config.d_model);
}

}  // namespace circuitbench
