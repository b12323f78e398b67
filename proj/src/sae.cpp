#include "circuitbench/sae.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>

#include "circuitbench/error.hpp"
#include "circuitbench/kernels.hpp"
#include "circuitbench/rng.hpp"
#include "circuitbench/tensor_file.hpp"

namespace circuitbench {

namespace {

void require_rows(const Tensor& t, std::size_t width, const char* what) {
  if (t.rank() != 2 || t.dim(1) != width) {
    throw ShapeError(fmt::format("{}: expected [n x {}], got {}", what, width, shape_string(t.shape())));
  }
}

// Shape-only copy filled with zeros.
SaeParams zeros_like(const SaeParams& p) {
  return {Tensor(p.w_enc.shape()), Tensor(p.b_enc.shape()), Tensor(p.w_dec.shape()),
          Tensor(p.b_dec.shape())};
}

struct Adam {
  SaeParams m, v;
  std::size_t t = 0;

  void step(Tensor& param, const Tensor& grad, Tensor& m1, Tensor& m2, const SaeTrainConfig& c,
            double bc1, double bc2) {
    auto p = param.data();
    auto g = grad.data();
    auto a = m1.data();
    auto b = m2.data();
    const auto b1 = static_cast<float>(c.beta1);
    const auto b2 = static_cast<float>(c.beta2);
    for (std::size_t i = 0; i < p.size(); ++i) {
      a[i] = b1 * a[i] + (1.0f - b1) * g[i];
      b[i] = b2 * b[i] + (1.0f - b2) * g[i] * g[i];
      const double mhat = a[i] / bc1;
      const double vhat = b[i] / bc2;
      p[i] -= static_cast<float>(c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon));
    }
  }

  void update(SaeParams& p, const SaeParams& g, const SaeTrainConfig& c) {
    ++t;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
    step(p.w_enc, g.w_enc, m.w_enc, v.w_enc, c, bc1, bc2);
    step(p.b_enc, g.b_enc, m.b_enc, v.b_enc, c, bc1, bc2);
    step(p.w_dec, g.w_dec, m.w_dec, v.w_dec, c, bc1, bc2);
    step(p.b_dec, g.b_dec, m.b_dec, v.b_dec, c, bc1, bc2);
  }
};

}  // namespace

void SaeParams::validate() const {
  const std::size_t d = b_dec.size();
  const std::size_t m = b_enc.size();
  if (d == 0 || m == 0 || b_enc.rank() != 1 || b_dec.rank() != 1 || w_enc.shape() != Shape{d, m} ||
      w_dec.shape() != Shape{m, d}) {
    throw ShapeError(fmt::format("inconsistent SAE shapes: W_enc {}, b_enc {}, W_dec {}, b_dec {}",
                                 shape_string(w_enc.shape()), shape_string(b_enc.shape()),
                                 shape_string(w_dec.shape()), shape_string(b_dec.shape())));
  }
}

Tensor encode(const SaeParams& sae, const Tensor& h) {
  const std::size_t d = sae.d_model(), m = sae.d_sae();
  require_rows(h, d, "SAE encode input");
  const std::size_t n = h.dim(0);
  Tensor centered = h;
  for (std::size_t r = 0; r < n; ++r) {
    auto row = centered.row(r);
    for (std::size_t j = 0; j < d; ++j) row[j] -= sae.b_dec.data()[j];
  }
  Tensor f({n, m});
  kernels::gemm_nn(centered.data().data(), sae.w_enc.data().data(), sae.b_enc.data().data(),
                   f.data().data(), n, d, m);
  for (auto& x : f.data()) x = x > 0.0f ? x : 0.0f;
  return f;
}

std::vector<float> encode(const SaeParams& sae, std::span<const float> h) {
  const Tensor f = encode(sae, Tensor({1, h.size()}, std::vector<float>(h.begin(), h.end())));
  return f.values();
}

Tensor decode(const SaeParams& sae, const Tensor& f) {
  const std::size_t d = sae.d_model(), m = sae.d_sae();
  require_rows(f, m, "SAE decode input");
  Tensor h({f.dim(0), d});
  kernels::gemm_nn(f.data().data(), sae.w_dec.data().data(), sae.b_dec.data().data(),
                   h.data().data(), f.dim(0), m, d);
  return h;
}

std::vector<float> decode(const SaeParams& sae, std::span<const float> f) {
  const Tensor h = decode(sae, Tensor({1, f.size()}, std::vector<float>(f.begin(), f.end())));
  return h.values();
}

SaeGradients loss_and_grads(const SaeParams& sae, const Tensor& batch, double l1_coefficient) {
  sae.validate();
  const std::size_t d = sae.d_model(), m = sae.d_sae();
  require_rows(batch, d, "SAE batch");
  const std::size_t n = batch.dim(0);
  if (n == 0) throw ShapeError("SAE batch is empty");
  const float inv_n = 1.0f / static_cast<float>(n);
  const auto lambda = static_cast<float>(l1_coefficient);

  // Forward.
  Tensor centered = batch;
  for (std::size_t r = 0; r < n; ++r) {
    auto row = centered.row(r);
    for (std::size_t j = 0; j < d; ++j) row[j] -= sae.b_dec.data()[j];
  }
  Tensor pre({n, m});
  kernels::gemm_nn(centered.data().data(), sae.w_enc.data().data(), sae.b_enc.data().data(),
                   pre.data().data(), n, d, m);
  Tensor f = pre;
  for (auto& x : f.data()) x = x > 0.0f ? x : 0.0f;
  Tensor err({n, d});  // ĥ - h
  kernels::gemm_nn(f.data().data(), sae.w_dec.data().data(), sae.b_dec.data().data(),
                   err.data().data(), n, m, d);

  SaeGradients out;
  double sq = 0, l1 = 0, l0 = 0;
  for (std::size_t i = 0; i < err.size(); ++i) {
    err.data()[i] -= batch.data()[i];
    sq += static_cast<double>(err.data()[i]) * err.data()[i];
  }
  for (float x : f.data()) {
    l1 += x;
    l0 += x > 0.0f;
  }
  out.loss.mse = sq / static_cast<double>(n);
  out.loss.l1 = l1 / static_cast<double>(n);
  out.loss.l0 = l0 / static_cast<double>(n);
  out.loss.loss = out.loss.mse + l1_coefficient * out.loss.l1;

  // Backward. g_hat = dL/dĥ = 2(ĥ - h)/n.
  Tensor& g_hat = err;
  for (auto& x : g_hat.data()) x *= 2.0f * inv_n;

  SaeParams& g = out.grads;
  g = zeros_like(sae);
  kernels::gemm_tn(f.data().data(), g_hat.data().data(), g.w_dec.data().data(), m, n, d);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = g_hat.row(r);
    for (std::size_t j = 0; j < d; ++j) g.b_dec.data()[j] += row[j];
  }

  // dL/dpre = (g_hat · W_decᵀ + λ/n) on active units, 0 elsewhere.
  Tensor g_pre({n, m});
  kernels::gemm_nt(g_hat.data().data(), sae.w_dec.data().data(), nullptr, g_pre.data().data(), n,
                   d, m);
  for (std::size_t i = 0; i < g_pre.size(); ++i) {
    g_pre.data()[i] = pre.data()[i] > 0.0f ? g_pre.data()[i] + lambda * inv_n : 0.0f;
  }
  kernels::gemm_tn(centered.data().data(), g_pre.data().data(), g.w_enc.data().data(), d, n, m);
  std::vector<float> pre_sum(m, 0.0f);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = g_pre.row(r);
    for (std::size_t k = 0; k < m; ++k) pre_sum[k] += row[k];
  }
  std::copy(pre_sum.begin(), pre_sum.end(), g.b_enc.data().begin());
  // The encoder sees h - b_dec, so b_dec also receives -W_enc · Σ g_pre.
  std::vector<float> through_enc(d);
  kernels::gemm_nn(sae.w_enc.data().data(), pre_sum.data(), nullptr, through_enc.data(), d, m, 1);
  for (std::size_t j = 0; j < d; ++j) g.b_dec.data()[j] -= through_enc[j];
  return out;
}

void project_decoder_grads(const SaeParams& sae, Tensor& w_dec_grad) {
  const std::size_t d = sae.d_model();
  for (std::size_t i = 0; i < sae.d_sae(); ++i) {
    const float* dir = sae.w_dec.row(i).data();
    float* g = w_dec_grad.row(i).data();
    const float along = kernels::dot(g, dir, d);
    for (std::size_t j = 0; j < d; ++j) g[j] -= along * dir[j];
  }
}

void normalize_decoder(SaeParams& sae) {
  const std::size_t d = sae.d_model();
  for (std::size_t i = 0; i < sae.d_sae(); ++i) {
    auto row = sae.w_dec.row(i);
    double sq = 0;
    for (float x : row) sq += static_cast<double>(x) * x;
    if (sq == 0.0) throw NumericError(fmt::format("decoder row {} collapsed to zero", i));
    const auto inv = static_cast<float>(1.0 / std::sqrt(sq));
    for (std::size_t j = 0; j < d; ++j) row[j] *= inv;
  }
}

SaeParams init_sae(const Tensor& dataset, std::size_t d_sae, std::uint64_t seed) {
  if (dataset.rank() != 2 || dataset.dim(0) == 0 || dataset.dim(1) == 0) {
    throw ShapeError("SAE dataset must be a nonempty [n x d] matrix");
  }
  if (d_sae == 0) throw ConfigError("d_sae must be positive");
  const std::size_t n = dataset.dim(0), d = dataset.dim(1);
  SeededRng rng(seed);
  const auto bound = static_cast<float>(1.0 / std::sqrt(static_cast<double>(d)));
  SaeParams p{Tensor({d, d_sae}), Tensor({d_sae}), Tensor({d_sae, d}), Tensor({d})};
  for (auto& x : p.w_enc.data()) x = rng.uniform(-bound, bound);
  for (auto& x : p.w_dec.data()) x = rng.uniform(-bound, bound);
  normalize_decoder(p);
  std::vector<double> mean(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += dataset(r, j);
  }
  for (std::size_t j = 0; j < d; ++j) p.b_dec.data()[j] = static_cast<float>(mean[j] / static_cast<double>(n));
  return p;
}

SaeTrainResult train_sae(const Tensor& dataset, const SaeTrainConfig& config) {
  if (config.steps == 0) throw ConfigError("sae.steps must be at least 1");
  if (config.batch_size == 0) throw ConfigError("sae.batch_size must be at least 1");
  if (config.l1_coefficient < 0) throw ConfigError("sae.l1_coefficient must be >= 0");
  require_finite(dataset.data(), "SAE training activations");

  SaeTrainResult result;
  SaeParams& p = result.params;
  p = init_sae(dataset, config.d_sae, derive_seed(config.seed, "sae-init"));
  Adam adam{zeros_like(p), zeros_like(p)};
  SeededRng order_rng(derive_seed(config.seed, "sae-batches"));

  const std::size_t n = dataset.dim(0), d = dataset.dim(1);
  const std::size_t batch = std::min(config.batch_size, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = n;  // forces a shuffle on the first step
  Tensor xb({batch, d});
  result.log.reserve(config.steps);

  for (std::size_t step = 0; step < config.steps; ++step) {
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == n) {
        order_rng.shuffle(order.begin(), order.end());
        cursor = 0;
      }
      auto src = dataset.row(order[cursor++]);
      std::copy(src.begin(), src.end(), xb.row(b).begin());
    }
    auto lg = loss_and_grads(p, xb, config.l1_coefficient);
    if (!std::isfinite(lg.loss.loss)) {
      throw NumericError(fmt::format("SAE training diverged at step {}: loss {}, mse {}, l1 {}", step,
                                     lg.loss.loss, lg.loss.mse, lg.loss.l1));
    }
    result.log.push_back({step, lg.loss});
    project_decoder_grads(p, lg.grads.w_dec);
    adam.update(p, lg.grads, config);
    normalize_decoder(p);
  }

  for (const auto* t : {&p.w_enc, &p.b_enc, &p.w_dec, &p.b_dec}) require_finite(t->data(), "SAE parameters");
  const Tensor f = encode(p, dataset);
  result.l0 = mean_l0(f);
  result.variance_explained = fraction_variance_explained(dataset, decode(p, f));
  for (std::size_t k = 0; k < p.d_sae(); ++k) {
    bool active = false;
    for (std::size_t r = 0; r < n && !active; ++r) active = f(r, k) > 0.0f;
    result.dead_features += !active;
  }
  return result;
}

double fraction_variance_explained(const Tensor& h, const Tensor& h_hat) {
  if (h.shape() != h_hat.shape() || h.rank() != 2) {
    throw ShapeError("variance explained: shapes differ");
  }
  const std::size_t n = h.dim(0), d = h.dim(1);
  if (n < 2) throw ConfigError("variance explained needs at least 2 rows");
  std::vector<double> mean(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += h(r, j);
  }
  for (auto& m : mean) m /= static_cast<double>(n);
  double resid = 0, total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      const double e = static_cast<double>(h(r, j)) - h_hat(r, j);
      const double c = h(r, j) - mean[j];
      resid += e * e;
      total += c * c;
    }
  }
  if (total == 0.0) throw NumericError("variance explained: dataset has zero variance");
  return 1.0 - resid / total;
}

double variance_explained(const SaeParams& sae, const Tensor& dataset) {
  return fraction_variance_explained(dataset, decode(sae, encode(sae, dataset)));
}

double mean_l0(const Tensor& features) {
  if (features.rank() != 2 || features.dim(0) == 0) throw ShapeError("mean_l0: expected [n x d_sae]");
  double active = 0;
  for (float x : features.data()) active += x > 0.0f;
  return active / static_cast<double>(features.dim(0));
}

std::string training_log_csv(const std::vector<SaeLogRow>& log) {
  std::string out = "step,loss,mse,l1,l0\n";
  for (const auto& r : log) {
    out += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.3f}\n", r.step, r.loss.loss, r.loss.mse,
                       r.loss.l1, r.loss.l0);
  }
  return out;
}

void save_sae(const std::filesystem::path& path, const SaeParams& sae) {
  sae.validate();
  write_tensor_file(path, kSaeMagic,
                    {{"W_enc", sae.w_enc}, {"b_enc", sae.b_enc}, {"W_dec", sae.w_dec}, {"b_dec", sae.b_dec}});
}

SaeParams load_sae(const std::filesystem::path& path) {
  auto tensors = read_tensor_file(path, kSaeMagic);
  SaeParams p;
  const std::pair<const char*, Tensor*> fields[] = {
      {"W_enc", &p.w_enc}, {"b_enc", &p.b_enc}, {"W_dec", &p.w_dec}, {"b_dec", &p.b_dec}};
  if (tensors.size() != std::size(fields)) {
    throw FormatError(fmt::format("{}: expected 4 SAE tensors, found {}", path.string(), tensors.size()));
  }
  for (const auto& [name, slot] : fields) {
    auto it = std::ranges::find_if(tensors, [&](const NamedTensor& t) { return t.name == name; });
    if (it == tensors.end()) throw FormatError(fmt::format("{}: missing tensor {}", path.string(), name));
    require_finite(it->tensor.data(), name);
    *slot = std::move(it->tensor);
  }
  p.validate();
  return p;
}

void save_activations(const std::filesystem::path& path, const Tensor& activations) {
  if (activations.rank() != 2) throw ShapeError("activations must be [n x d]");
  write_tensor_file(path, kActivationMagic, {{"activations", activations}});
}

Tensor load_activations(const std::filesystem::path& path) {
  auto tensors = read_tensor_file(path, kActivationMagic);
  if (tensors.size() != 1 || tensors.front().name != "activations" || tensors.front().tensor.rank() != 2) {
    throw FormatError(path.string() + ": expected one [n x d] tensor named activations");
  }
  return std::move(tensors.front().tensor);
}

}  // namespace circuitbench
