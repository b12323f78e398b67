#include "circuitbench/model.hpp"

#include <fmt/format.h>
#include <map>

#include "circuitbench/error.hpp"
#include "circuitbench/rng.hpp"
#include "circuitbench/tensor_file.hpp"

namespace circuitbench {

namespace {

// Member pointers in the same order as expected_tensors() lists layer tensors.
struct LayerField {
  const char* suffix;
  Tensor LayerWeights::*member;
};

constexpr LayerField kLayerFields[] = {
    {"ln_1.g", &LayerWeights::ln1_g},       {"ln_1.b", &LayerWeights::ln1_b},
    {"attn.c_attn.w", &LayerWeights::attn_w}, {"attn.c_attn.b", &LayerWeights::attn_b},
    {"attn.c_proj.w", &LayerWeights::proj_w}, {"attn.c_proj.b", &LayerWeights::proj_b},
    {"ln_2.g", &LayerWeights::ln2_g},       {"ln_2.b", &LayerWeights::ln2_b},
    {"mlp.c_fc.w", &LayerWeights::fc_w},     {"mlp.c_fc.b", &LayerWeights::fc_b},
    {"mlp.c_proj.w", &LayerWeights::out_w},  {"mlp.c_proj.b", &LayerWeights::out_b},
};

std::vector<Shape> layer_shapes(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  return {{d}, {d}, {d, 3 * d}, {3 * d}, {d, d}, {d}, {d}, {d}, {d, c.d_mlp()}, {c.d_mlp()},
          {c.d_mlp(), d}, {d}};
}

}  // namespace

std::vector<TensorSpec> expected_tensors(const ModelConfig& c) {
  std::vector<TensorSpec> specs;
  specs.push_back({"wte", {c.d_vocab, c.d_model}});
  specs.push_back({"wpe", {c.n_ctx, c.d_model}});
  const auto shapes = layer_shapes(c);
  for (std::size_t l = 0; l < c.n_layer; ++l) {
    for (std::size_t f = 0; f < std::size(kLayerFields); ++f) {
      specs.push_back({fmt::format("h.{}.{}", l, kLayerFields[f].suffix), shapes[f]});
    }
  }
  specs.push_back({"ln_f.g", {c.d_model}});
  specs.push_back({"ln_f.b", {c.d_model}});
  return specs;
}

ModelWeights load_weights(const std::filesystem::path& path, const ModelConfig& expected) {
  if (expected.n_head == 0 || expected.d_model % expected.n_head != 0) {
    throw ConfigError("model config: d_model must be divisible by n_head");
  }
  auto tensors = read_tensor_file(path, kModelMagic);
  std::map<std::string, Tensor> by_name;
  for (auto& [name, tensor] : tensors) {
    if (!by_name.emplace(name, std::move(tensor)).second) {
      throw FormatError(fmt::format("{}: duplicate tensor {}", path.string(), name));
    }
  }
  auto take = [&](const TensorSpec& spec) {
    auto it = by_name.find(spec.name);
    if (it == by_name.end()) {
      throw FormatError(fmt::format("{}: missing tensor {}", path.string(), spec.name));
    }
    if (it->second.shape() != spec.shape) {
      throw FormatError(fmt::format("{}: tensor {} has shape {}, expected {}", path.string(),
                                    spec.name, shape_string(it->second.shape()),
                                    shape_string(spec.shape)));
    }
    Tensor t = std::move(it->second);
    by_name.erase(it);
    require_finite(t.data(), spec.name);
    return t;
  };

  const auto specs = expected_tensors(expected);
  ModelWeights w;
  w.config = expected;
  std::size_t s = 0;
  w.wte = take(specs[s++]);
  w.wpe = take(specs[s++]);
  w.layers.resize(expected.n_layer);
  for (auto& layer : w.layers) {
    for (const auto& field : kLayerFields) {
      layer.*field.member = take(specs[s++]);
    }
  }
  w.lnf_g = take(specs[s++]);
  w.lnf_b = take(specs[s++]);
  if (!by_name.empty()) {
    throw FormatError(fmt::format("{}: unexpected tensor {}", path.string(), by_name.begin()->first));
  }
  return w;
}

void save_weights(const std::filesystem::path& path, const ModelWeights& w) {
  const auto specs = expected_tensors(w.config);
  std::vector<NamedTensor> out;
  out.reserve(specs.size());
  std::size_t s = 0;
  out.push_back({specs[s++].name, w.wte});
  out.push_back({specs[s++].name, w.wpe});
  for (const auto& layer : w.layers) {
    for (const auto& field : kLayerFields) {
      out.push_back({specs[s++].name, layer.*field.member});
    }
  }
  out.push_back({specs[s++].name, w.lnf_g});
  out.push_back({specs[s++].name, w.lnf_b});
  write_tensor_file(path, kModelMagic, out);
}

ModelWeights random_weights(const ModelConfig& c, std::uint64_t seed) {
  SeededRng rng(seed);
  auto uniform = [&](Shape shape, float scale) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) {
      v = rng.uniform(-scale, scale);
    }
    return t;
  };
  auto around_one = [&](std::size_t n) {
    Tensor t({n});
    for (auto& v : t.data()) {
      v = 1.0f + rng.uniform(-0.1f, 0.1f);
    }
    return t;
  };
  const std::size_t d = c.d_model;
  ModelWeights w;
  w.config = c;
  w.wte = uniform({c.d_vocab, d}, 0.1f);
  w.wpe = uniform({c.n_ctx, d}, 0.02f);
  w.layers.resize(c.n_layer);
  for (auto& l : w.layers) {
    l.ln1_g = around_one(d);
    l.ln1_b = uniform({d}, 0.02f);
    l.attn_w = uniform({d, 3 * d}, 0.2f);
    l.attn_b = uniform({3 * d}, 0.02f);
    l.proj_w = uniform({d, d}, 0.1f);
    l.proj_b = uniform({d}, 0.02f);
    l.ln2_g = around_one(d);
    l.ln2_b = uniform({d}, 0.02f);
    l.fc_w = uniform({d, c.d_mlp()}, 0.1f);
    l.fc_b = uniform({c.d_mlp()}, 0.02f);
    l.out_w = uniform({c.d_mlp(), d}, 0.05f);
    l.out_b = uniform({d}, 0.02f);
  }
  w.lnf_g = around_one(d);
  w.lnf_b = uniform({d}, 0.02f);
  return w;
}

std::size_t parameter_count(const ModelWeights& w) {
  std::size_t n = w.wte.size() + w.wpe.size() + w.lnf_g.size() + w.lnf_b.size();
  for (const auto& l : w.layers) {
    for (const auto& field : kLayerFields) {
      n += (l.*field.member).size();
    }
  }
  return n;
}

}  // namespace circuitbench
