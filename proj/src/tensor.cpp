#include "circuitbench/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "circuitbench/error.hpp"
#include "circuitbench/kernels.hpp"

namespace circuitbench {

std::size_t shape_size(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (auto d : shape) {
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  return fmt::format("[{}]", fmt::join(shape, "x"));
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    throw ShapeError(fmt::format("tensor data length {} does not match shape {}",
                                 data_.size(), shape_string(shape_)));
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<float> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) {
      throw ShapeError("ragged rows");
    }
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError(fmt::format("axis {} out of range for shape {}", axis, shape_string(shape_)));
  }
  return shape_[axis];
}

std::span<float> Tensor::row(std::size_t r) {
  const std::size_t width = shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / shape_[0];
  return std::span<float>(data_).subspan(r * width, width);
}

std::span<const float> Tensor::row(std::size_t r) const {
  const std::size_t width = shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / shape_[0];
  return std::span<const float>(data_).subspan(r * width, width);
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError(fmt::format("matmul: incompatible shapes {} and {}",
                                 shape_string(a.shape()), shape_string(b.shape())));
  }
  Tensor c({a.dim(0), b.dim(1)});
  kernels::gemm_nn(a.data().data(), b.data().data(), nullptr, c.data().data(),
                   a.dim(0), a.dim(1), b.dim(1));
  return c;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (w.rank() != 2 || x.rank() == 0 || x.shape().back() != w.dim(0) || bias.size() != w.dim(1)) {
    throw ShapeError(fmt::format("linear: x {} w {} bias {}", shape_string(x.shape()),
                                 shape_string(w.shape()), shape_string(bias.shape())));
  }
  const std::size_t rows = x.size() / w.dim(0);
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  Tensor out(std::move(out_shape));
  kernels::gemm_nn(x.data().data(), w.data().data(), bias.data().data(), out.data().data(), rows,
                   w.dim(0), w.dim(1));
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  if (x.rank() == 0 || x.shape().back() == 0) {
    throw ShapeError("layer_norm: last dimension is zero");
  }
  const std::size_t d = x.shape().back();
  if (gamma.size() != d || beta.size() != d) {
    throw ShapeError("layer_norm: gamma/beta width mismatch");
  }
  if (!(eps >= 0.0f)) {
    throw Error("layer_norm: eps must be nonnegative");
  }
  Tensor out(x.shape());
  const std::size_t rows = x.size() / d;
  const float* in = x.data().data();
  float* o = out.data().data();
  const float* g = gamma.data().data();
  const float* b = beta.data().data();
  const float inv_d = 1.0f / static_cast<float>(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = in + r * d;
    float* yr = o + r * d;
    float sum = 0.0f;
    for (std::size_t i = 0; i < d; ++i) {
      sum += xr[i];
    }
    const float mean = sum * inv_d;
    float sq = 0.0f;
    for (std::size_t i = 0; i < d; ++i) {
      const float c = xr[i] - mean;
      sq += c * c;
    }
    const float inv_std = 1.0f / std::sqrt(sq * inv_d + eps);
    for (std::size_t i = 0; i < d; ++i) {
      yr[i] = (xr[i] - mean) * inv_std * g[i] + b[i];
    }
  }
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& shape = x.shape();
  if (axis >= shape.size()) {
    throw ShapeError("softmax: axis out of range");
  }
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) {
    outer *= shape[i];
  }
  for (std::size_t i = axis + 1; i < shape.size(); ++i) {
    inner *= shape[i];
  }
  const std::size_t len = shape[axis];
  Tensor out(shape);
  const float* in = x.data().data();
  float* o = out.data().data();
  for (std::size_t a = 0; a < outer; ++a) {
    for (std::size_t b = 0; b < inner; ++b) {
      const std::size_t base = a * len * inner + b;
      float mx = -INFINITY;
      for (std::size_t i = 0; i < len; ++i) {
        mx = std::max(mx, in[base + i * inner]);
      }
      float sum = 0.0f;
      for (std::size_t i = 0; i < len; ++i) {
        const float e = std::exp(in[base + i * inner] - mx);
        o[base + i * inner] = e;
        sum += e;
      }
      const float inv = 1.0f / sum;
      for (std::size_t i = 0; i < len; ++i) {
        o[base + i * inner] *= inv;
      }
    }
  }
  return out;
}

float gelu(float x) noexcept {
  constexpr float kSqrt2OverPi = 0.7978845608028654f;
  return 0.5f * x * (1.0f + std::tanh(kSqrt2OverPi * (x + 0.044715f * x * x * x)));
}

Tensor gelu(const Tensor& x) {
  Tensor out(x.shape());
  auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) {
    o[i] = gelu(in[i]);
  }
  return out;
}

void require_finite(std::span<const float> values, const std::string& what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(fmt::format("non-finite value {} at index {} in {}", values[i], i, what));
    }
  }
}

}  // namespace circuitbench
