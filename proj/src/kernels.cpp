#include "circuitbench/kernels.hpp"

#include <algorithm>
#include <vector>

namespace circuitbench::kernels {

namespace {

constexpr std::size_t kColumnBlock = 512;

// c[i, j0:j1] = sum_kk a[i, kk] * b[kk, j0:j1]
inline void row_block_nn(const float* a, const float* b, float* c, std::size_t i,
                         std::size_t k, std::size_t n, std::size_t j0, std::size_t j1) {
  float* out = c + i * n + j0;
  const std::size_t len = j1 - j0;
  std::fill(out, out + len, 0.0f);
  const float* arow = a + i * k;
  for (std::size_t kk = 0; kk < k; ++kk) {
    const float av = arow[kk];
    const float* brow = b + kk * n + j0;
    for (std::size_t j = 0; j < len; ++j) {
      out[j] += av * brow[j];
    }
  }
}

inline void add_bias(const float* bias, float* c, std::size_t m, std::size_t n) {
  if (bias == nullptr) {
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    float* row = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] += bias[j];
    }
  }
}

std::vector<float> transpose(const float* b, std::size_t rows, std::size_t cols) {
  std::vector<float> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      t[c * rows + r] = b[r * cols + c];
    }
  }
  return t;
}

}  // namespace

void gemm_nn(const float* a, const float* b, const float* bias, float* c,
             std::size_t m, std::size_t k, std::size_t n) {
  const std::size_t blocks = (n + kColumnBlock - 1) / kColumnBlock;
  const std::size_t tasks = m * blocks;
  const bool parallel = m * k * n >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t t = 0; t < tasks; ++t) {
    const std::size_t i = t / blocks;
    const std::size_t j0 = (t % blocks) * kColumnBlock;
    const std::size_t j1 = std::min(n, j0 + kColumnBlock);
    row_block_nn(a, b, c, i, k, n, j0, j1);
  }
  add_bias(bias, c, m, n);
}

void gemm_nt(const float* a, const float* b, const float* bias, float* c,
             std::size_t m, std::size_t k, std::size_t n) {
  // A few rows against a large b: transposing b costs more than the product.
  if (m < 8) {
    const bool parallel = m * k * n >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < m; ++i) {
        const float sum = dot(a + i * k, b + j * k, k);
        c[i * n + j] = bias ? sum + bias[j] : sum;
      }
    }
    return;
  }
  const std::vector<float> bt = transpose(b, n, k);
  gemm_nn(a, bt.data(), bias, c, m, k, n);
}

void gemm_tn(const float* a, const float* b, float* c,
             std::size_t m, std::size_t k, std::size_t n) {
  const bool parallel = m * k * n >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t i = 0; i < m; ++i) {
    float* out = c + i * n;
    std::fill(out, out + n, 0.0f);
    for (std::size_t kk = 0; kk < k; ++kk) {
      const float av = a[kk * m + i];
      const float* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) {
        out[j] += av * brow[j];
      }
    }
  }
}

float dot(const float* x, const float* y, std::size_t n) noexcept {
  float sum = 0.0f;
  for (std::size_t i = 0; i < n; ++i) {
    sum += x[i] * y[i];
  }
  return sum;
}

namespace serial {

void gemm_nn(const float* a, const float* b, const float* bias, float* c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      float sum = 0.0f;
      for (std::size_t kk = 0; kk < k; ++kk) {
        sum += a[i * k + kk] * b[kk * n + j];
      }
      c[i * n + j] = bias ? sum + bias[j] : sum;
    }
  }
}

void gemm_nt(const float* a, const float* b, const float* bias, float* c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const float sum = dot(a + i * k, b + j * k, k);
      c[i * n + j] = bias ? sum + bias[j] : sum;
    }
  }
}

void gemm_tn(const float* a, const float* b, float* c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      float sum = 0.0f;
      for (std::size_t kk = 0; kk < k; ++kk) {
        sum += a[kk * m + i] * b[kk * n + j];
      }
      c[i * n + j] = sum;
    }
  }
}

}  // namespace serial

}  // namespace circuitbench::kernels
