#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "circuitbench/tensor.hpp"

namespace circuitbench {

/// ReLU sparse autoencoder with unit-norm decoder rows.
///   f = ReLU((h - b_dec) · W_enc + b_enc)
///   ĥ = f · W_dec + b_dec
struct SaeParams {
  Tensor w_enc;  // [d_model × d_sae]
  Tensor b_enc;  // [d_sae]
  Tensor w_dec;  // [d_sae × d_model]; row i is feature i's direction
  Tensor b_dec;  // [d_model]

  std::size_t d_model() const { return b_dec.size(); }
  std::size_t d_sae() const { return b_enc.size(); }

  /// Throws ShapeError unless the four tensors agree.
  void validate() const;
};

struct SaeTrainConfig {
  std::size_t d_sae = 1024;
  double l1_coefficient = 0.5;
  std::size_t steps = 3000;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
};

/// Features for every row of h [n × d_model] -> [n × d_sae].
Tensor encode(const SaeParams& sae, const Tensor& h);
std::vector<float> encode(const SaeParams& sae, std::span<const float> h);

/// Reconstruction for every row of f [n × d_sae] -> [n × d_model].
Tensor decode(const SaeParams& sae, const Tensor& f);
std::vector<float> decode(const SaeParams& sae, std::span<const float> f);

struct SaeLoss {
  double loss = 0;  // mse + l1_coefficient * l1
  double mse = 0;   // mean over the batch of ||h - ĥ||²
  double l1 = 0;    // mean over the batch of ||f||₁
  double l0 = 0;    // mean count of active features
};

struct SaeGradients {
  SaeLoss loss;
  SaeParams grads;  // unprojected gradients of loss for every parameter
};

/// Loss and analytic gradients on batch [B × d_model].
SaeGradients loss_and_grads(const SaeParams& sae, const Tensor& batch, double l1_coefficient);

/// Removes from each decoder-row gradient its component along that row.
void project_decoder_grads(const SaeParams& sae, Tensor& w_dec_grad);

/// Rescales each decoder row to unit L2 norm.
void normalize_decoder(SaeParams& sae);

/// Seeded uniform(-1/√d, 1/√d) weights, unit decoder rows, b_enc = 0,
/// b_dec = per-dimension mean of `dataset`.
SaeParams init_sae(const Tensor& dataset, std::size_t d_sae, std::uint64_t seed);

struct SaeLogRow {
  std::size_t step = 0;
  SaeLoss loss;
};

struct SaeTrainResult {
  SaeParams params;
  std::vector<SaeLogRow> log;
  double l0 = 0;                  // on the full training set
  double variance_explained = 0;  // on the full training set
  std::size_t dead_features = 0;  // never active on the training set
};

/// Adam on shuffled minibatches (reshuffled every epoch); decoder gradient
/// projected before and decoder rows renormalized after every step.
SaeTrainResult train_sae(const Tensor& dataset, const SaeTrainConfig& config);

/// 1 - Σ||h - ĥ||² / Σ||h - h̄||² with f64 accumulation.
double fraction_variance_explained(const Tensor& h, const Tensor& h_hat);

/// Full-reconstruction FVE of the SAE on `dataset`.
double variance_explained(const SaeParams& sae, const Tensor& dataset);

/// Mean number of active features per row.
double mean_l0(const Tensor& features);

std::string training_log_csv(const std::vector<SaeLogRow>& log);

void save_sae(const std::filesystem::path& path, const SaeParams& sae);
SaeParams load_sae(const std::filesystem::path& path);

/// [n × d_model] activation matrices in the flat tensor format.
void save_activations(const std::filesystem::path& path, const Tensor& activations);
Tensor load_activations(const std::filesystem::path& path);

}  // namespace circuitbench
