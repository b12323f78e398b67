#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "circuitbench/tensor.hpp"

namespace circuitbench {

/// Architecture constants of a GPT-2 style decoder.
struct ModelConfig {
  std::size_t n_layer = 12;
  std::size_t n_head = 12;
  std::size_t d_model = 768;
  std::size_t d_vocab = 50257;
  std::size_t n_ctx = 1024;
  float ln_eps = 1e-5f;

  std::size_t d_head() const noexcept { return d_model / n_head; }
  std::size_t d_mlp() const noexcept { return 4 * d_model; }

  static ModelConfig gpt2_small() { return {}; }

  bool operator==(const ModelConfig&) const = default;
};

struct LayerWeights {
  Tensor ln1_g, ln1_b;
  Tensor attn_w, attn_b;  // [D×3D], [3D]; columns are q | k | v, head-major inside each
  Tensor proj_w, proj_b;  // [D×D], [D]
  Tensor ln2_g, ln2_b;
  Tensor fc_w, fc_b;      // [D×4D], [4D]
  Tensor out_w, out_b;    // [4D×D], [D]
};

/// Immutable GPT-2 parameters. Canonical tensor names:
///   wte [V×D], wpe [P×D], ln_f.g, ln_f.b [D], and per layer l
///   h.l.ln_1.{g,b}, h.l.attn.c_attn.{w,b}, h.l.attn.c_proj.{w,b},
///   h.l.ln_2.{g,b}, h.l.mlp.c_fc.{w,b}, h.l.mlp.c_proj.{w,b}
/// Projection matrices are stored [in × out].
struct ModelWeights {
  ModelConfig config;
  Tensor wte;
  Tensor wpe;
  std::vector<LayerWeights> layers;
  Tensor lnf_g, lnf_b;
};

struct TensorSpec {
  std::string name;
  Shape shape;
};

/// Every tensor the runtime needs for `config`, in file order.
std::vector<TensorSpec> expected_tensors(const ModelConfig& config);

/// Loads a weight file and validates it against `expected`.
ModelWeights load_weights(const std::filesystem::path& path,
                          const ModelConfig& expected = ModelConfig::gpt2_small());

void save_weights(const std::filesystem::path& path, const ModelWeights& weights);

/// Seeded random parameters with GPT-2-like scales; used by tests and demos.
ModelWeights random_weights(const ModelConfig& config, std::uint64_t seed);

std::size_t parameter_count(const ModelWeights& weights);

}  // namespace circuitbench
