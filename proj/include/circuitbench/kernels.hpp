#pragma once

#include <cstddef>

// Dense f32 GEMM kernels.
//
// Every output element is accumulated as ((0 + x0*y0) + x1*y1) + ... with the
// reduction index increasing, and the optional bias added after the sum.
// Parallel variants split work over output rows/column blocks only, so they
// are bit-identical to the serial reference for any thread count.

namespace circuitbench::kernels {

/// c[m×n] = a[m×k] · b[k×n] (+ bias[n]).
void gemm_nn(const float* a, const float* b, const float* bias, float* c,
             std::size_t m, std::size_t k, std::size_t n);

/// c[m×n] = a[m×k] · b[n×k]ᵀ (+ bias[n]).
void gemm_nt(const float* a, const float* b, const float* bias, float* c,
             std::size_t m, std::size_t k, std::size_t n);

/// c[m×n] = a[k×m]ᵀ · b[k×n].
void gemm_tn(const float* a, const float* b, float* c,
             std::size_t m, std::size_t k, std::size_t n);

/// Sequential dot product, same summation order as the GEMMs.
float dot(const float* x, const float* y, std::size_t n) noexcept;

/// Minimum multiply-accumulate count before a kernel opens a parallel region.
inline constexpr std::size_t kParallelWork = std::size_t{1} << 18;

namespace serial {

void gemm_nn(const float* a, const float* b, const float* bias, float* c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_nt(const float* a, const float* b, const float* bias, float* c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_tn(const float* a, const float* b, float* c,
             std::size_t m, std::size_t k, std::size_t n);

}  // namespace serial

}  // namespace circuitbench::kernels
