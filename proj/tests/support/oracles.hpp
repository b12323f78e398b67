#pragma once

// Independent reference computations used only by tests. Nothing here calls
// into the kernels or analysis code it is used to check.

#include <functional>
#include <vector>

namespace oracle {

/// Textbook triple loop in double precision.
std::vector<double> naive_matmul(const std::vector<float>& a, const std::vector<float>& b,
                                 std::size_t m, std::size_t k, std::size_t n);

/// Central finite difference of f with respect to x[i].
double central_difference(const std::function<double()>& f, float& x, double step);
double central_difference(const std::function<double()>& f, double& x, double step);

/// Sparse autoencoder in double precision, straight from the definition:
/// mean over rows of ||h - ĥ||² + λ·||f||₁ with f = ReLU((h - b_dec)W_enc + b_enc),
/// ĥ = f W_dec + b_dec. Row-major, W_enc [d×m], W_dec [m×d].
struct SaeF64 {
  std::size_t d = 0, m = 0;
  std::vector<double> w_enc, b_enc, w_dec, b_dec;
};
double sae_loss(const SaeF64& sae, const std::vector<double>& batch, std::size_t rows, double lambda);

/// Pearson correlation straight from the definition.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

/// AUC as the fraction of (positive, negative) pairs ranked correctly, ties 1/2.
double pairwise_auc(const std::vector<double>& pos, const std::vector<double>& neg);

}  // namespace oracle
