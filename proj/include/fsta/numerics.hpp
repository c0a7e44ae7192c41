#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fsta/rng.hpp"
#include "fsta/tensor.hpp"

namespace fsta {

enum class Mode { kTrain, kEval };

namespace detail {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

/// c[m,n] (+)= alpha * op_a(a) * op_b(b) where op transposes the stored
/// matrix. a is stored [m,k] (or [k,m] when ta), b is stored [k,n] (or [n,k]
/// when tb).
inline void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k,
                 const double* a, const double* b, double* c, bool accumulate,
                 double alpha = 1.0) {
  ConstMap ma(a, static_cast<Eigen::Index>(ta ? k : m),
              static_cast<Eigen::Index>(ta ? m : k));
  ConstMap mb(b, static_cast<Eigen::Index>(tb ? n : k),
              static_cast<Eigen::Index>(tb ? k : n));
  MutMap mc(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  auto apply = [&](const auto& product) {
    if (accumulate) mc.noalias() += alpha * product;
    else mc.noalias() = alpha * product;
  };
  if (!ta && !tb) apply(ma * mb);
  else if (!ta && tb) apply(ma * mb.transpose());
  else if (ta && !tb) apply(ma.transpose() * mb);
  else apply(ma.transpose() * mb.transpose());
}

inline void exp_inplace(double* x, std::size_t n) {
  Eigen::Map<Eigen::ArrayXd> m(x, static_cast<Eigen::Index>(n));
  m = m.exp();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("sub: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b[i];
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c;
  return out;
}

inline Tensor relu(const Tensor& a) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::max(out[i], 0.0);
  return out;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

/// Batched matrix product a[..,m,k] x b[..,k,n] -> [..,m,n]. Leading extents
/// must match exactly or be absent on one side (that side is broadcast).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul requires rank >= 2, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.extent(a.rank() - 2);
  const std::size_t ka = a.extent(a.rank() - 1);
  const std::size_t kb = b.extent(b.rank() - 2);
  const std::size_t n = b.extent(b.rank() - 1);
  Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  const bool batches_ok =
      batch_a == batch_b || batch_a.empty() || batch_b.empty();
  if (ka != kb || !batches_ok) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  Shape batch = batch_a.empty() ? batch_b : batch_a;
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out = Tensor::uninit(out_shape);
  const std::size_t n_batches = shape_numel(batch);
  const std::size_t stride_a = batch_a.empty() ? 0 : m * ka;
  const std::size_t stride_b = batch_b.empty() ? 0 : ka * n;
  for (std::size_t i = 0; i < n_batches; ++i) {
    detail::gemm(false, false, m, n, ka, a.data() + i * stride_a,
                 b.data() + i * stride_b, out.data() + i * m * n, false);
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

/// Softmax along `axis`, computed with max-subtraction.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.extent(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.extent(i);
  const std::size_t len = x.extent(axis);
  Tensor out = x;
  if (inner == 1) {
    // contiguous rows; the hot path
    for (std::size_t o = 0; o < outer; ++o) {
      double* row = out.data() + o * len;
      double mx = row[0];
      for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, row[i]);
      for (std::size_t i = 0; i < len; ++i) row[i] -= mx;
      detail::exp_inplace(row, len);
      double sum = 0.0;
      for (std::size_t i = 0; i < len; ++i) sum += row[i];
      const double inv = 1.0 / sum;
      for (std::size_t i = 0; i < len; ++i) row[i] *= inv;
    }
  } else {
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        double* base = out.data() + o * len * inner + in;
        double mx = base[0];
        for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, base[i * inner]);
        double sum = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
          double e = std::exp(base[i * inner] - mx);
          base[i * inner] = e;
          sum += e;
        }
        const double inv = 1.0 / sum;
        for (std::size_t i = 0; i < len; ++i) base[i * inner] *= inv;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// layer_norm
// ---------------------------------------------------------------------------

/// Normalize each vector along the last axis to zero mean / unit variance
/// (population variance, eps inside the square root), then apply the affine.
inline Tensor layer_norm(const Tensor& x, const Tensor& scale_t,
                         const Tensor& shift_t, double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: rank must be >= 1");
  const std::size_t d = x.extent(x.rank() - 1);
  if (scale_t.numel() != d || shift_t.numel() != d) {
    throw ShapeError("layer_norm: affine length mismatch with last extent " +
                     std::to_string(d));
  }
  if (eps <= 0.0) throw ValueError("layer_norm: eps must be > 0");
  const std::size_t rows = x.numel() / d;
  Tensor out = Tensor::uninit(x.shape());
  const double* g = scale_t.data();
  const double* b = shift_t.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.data() + r * d;
    double* orow = out.data() + r * d;
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += row[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double c = row[i] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      orow[i] = (row[i] - mean) * inv * g[i] + b[i];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// channel_mix
// ---------------------------------------------------------------------------

/// Per-position linear map over the channel (last) axis; exactly a 1x1
/// convolution. x[..,C_in] x kernel[C_in,C_out] + bias[C_out].
inline Tensor channel_mix(const Tensor& x, const Tensor& kernel,
                          const Tensor& bias) {
  if (x.rank() < 2 || kernel.rank() != 2) {
    throw ShapeError("channel_mix: need x rank >= 2 and 2-d kernel, got " +
                     shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
  }
  const std::size_t c_in = x.extent(x.rank() - 1);
  const std::size_t c_out = kernel.extent(1);
  if (kernel.extent(0) != c_in || bias.numel() != c_out) {
    throw ShapeError("channel_mix: channel mismatch, x " + shape_str(x.shape()) +
                     " kernel " + shape_str(kernel.shape()));
  }
  Shape out_shape = x.shape();
  out_shape.back() = c_out;
  Tensor out = Tensor::uninit(out_shape);
  const std::size_t rows = x.numel() / c_in;
  detail::gemm(false, false, rows, c_out, c_in, x.data(), kernel.data(),
               out.data(), false);
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * c_out;
    for (std::size_t j = 0; j < c_out; ++j) row[j] += bias[j];
  }
  return out;
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

/// Inverted-dropout mask: entries are 0 with probability `rate`, otherwise
/// 1/(1-rate). Consumes exactly `n` uniforms from the stream.
inline DoubleVec dropout_mask(std::size_t n, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ValueError("dropout rate must be in [0, 1), got " +
                     std::to_string(rate));
  }
  DoubleVec mask(n);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < n; ++i) {
    mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
  }
  return mask;
}

/// Inverted dropout: identity in eval mode; in train mode zeros each element
/// with probability `rate` and scales survivors by 1/(1-rate).
inline Tensor dropout(const Tensor& x, double rate, Mode mode, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ValueError("dropout rate must be in [0, 1), got " +
                     std::to_string(rate));
  }
  if (mode == Mode::kEval || rate == 0.0) return x;
  Tensor out = x;
  DoubleVec mask = dropout_mask(x.numel(), rate, rng);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
  return out;
}

// ---------------------------------------------------------------------------
// random fills
// ---------------------------------------------------------------------------

inline void fill_uniform(Tensor& t, double lo, double hi, Rng& rng) {
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
}

inline void fill_normal(Tensor& t, double mean, double stddev, Rng& rng) {
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(mean, stddev);
}

}  // namespace fsta
