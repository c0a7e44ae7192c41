#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "fsta/numerics.hpp"
#include "fsta/tensor.hpp"

namespace fsta {

/// Half spectrum of a real [T,N,D] signal along the time axis: bins
/// 0..floor(T/2), stored as separate real/imaginary planes of shape [F,N,D].
struct ComplexSpectrum {
  Tensor re;             // [F,N,D]
  Tensor im;             // [F,N,D]
  std::size_t n_points;  // original T

  std::size_t n_bins() const { return re.extent(0); }
};

/// Learnable complex half-spectrum filter; same layout as the spectrum it
/// modulates. Imaginary parts at bin 0 (and T/2 for even T) must stay 0 so
/// the filtered inverse transform is exactly real.
struct SpectralFilter {
  Tensor re;  // [F,N,D]
  Tensor im;  // [F,N,D]
};

/// Real [T,N,D] kernel of the cyclic convolution equivalent to a filter.
struct CyclicKernel {
  Tensor values;  // [T,N,D]
};

inline std::size_t half_bins(std::size_t n_points) { return n_points / 2 + 1; }

namespace detail {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// cos/sin tables for the direct transform: entry (f,t) = trig(2*pi*f*t/T).
struct TrigTables {
  std::size_t n_points = 0;
  std::size_t n_bins = 0;
  DoubleVec cos_ft;  // [F*T]
  DoubleVec sin_ft;  // [F*T]
};

inline std::shared_ptr<const TrigTables> trig_tables(std::size_t t_len) {
  static std::mutex mu;
  static std::unordered_map<std::size_t, std::shared_ptr<const TrigTables>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(t_len);
  if (it != cache.end()) return it->second;
  auto tab = std::make_shared<TrigTables>();
  tab->n_points = t_len;
  tab->n_bins = half_bins(t_len);
  tab->cos_ft.resize(tab->n_bins * t_len);
  tab->sin_ft.resize(tab->n_bins * t_len);
  const double step = 2.0 * M_PI / static_cast<double>(t_len);
  for (std::size_t f = 0; f < tab->n_bins; ++f) {
    for (std::size_t t = 0; t < t_len; ++t) {
      // reduce f*t mod T first so large products do not lose precision
      const double angle = step * static_cast<double>((f * t) % t_len);
      tab->cos_ft[f * t_len + t] = std::cos(angle);
      tab->sin_ft[f * t_len + t] = std::sin(angle);
    }
  }
  cache.emplace(t_len, tab);
  return tab;
}

/// In-place iterative radix-2 complex FFT (decimation in time).
/// `inverse` flips the twiddle sign; no normalization is applied.
inline void fft_complex_pow2(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * M_PI / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

/// Half-spectrum analysis of x [T,S] flattened series-major: for every series
/// column s, out_re/out_im[f,s] = sum_t x[t,s] * e^{-i 2pi f t / T}.
/// Power-of-two lengths run the radix-2 path; others use the table DFT, which
/// is two dense [F,T]x[T,S] products.
inline void analyze(const double* x, std::size_t t_len, std::size_t n_series,
                    double* out_re, double* out_im) {
  const std::size_t f_len = half_bins(t_len);
  if (is_pow2(t_len) && t_len >= 2) {
    std::vector<std::complex<double>> buf(t_len);
    for (std::size_t s = 0; s < n_series; ++s) {
      for (std::size_t t = 0; t < t_len; ++t) buf[t] = x[t * n_series + s];
      fft_complex_pow2(buf, false);
      for (std::size_t f = 0; f < f_len; ++f) {
        out_re[f * n_series + s] = buf[f].real();
        out_im[f * n_series + s] = buf[f].imag();
      }
    }
    return;
  }
  auto tab = trig_tables(t_len);
  gemm(false, false, f_len, n_series, t_len, tab->cos_ft.data(), x, out_re,
       false);
  gemm(false, false, f_len, n_series, t_len, tab->sin_ft.data(), x, out_im,
       false);
  for (std::size_t i = 0; i < f_len * n_series; ++i) out_im[i] = -out_im[i];
}

/// Weighted half-spectrum synthesis: out[t,s] = sum_f w[f] * (re[f,s] *
/// cos(2pi f t/T) - im[f,s] * sin(2pi f t/T)). With w = {1/T, 2/T, ...,
/// 1/T-or-2/T} this is the real inverse transform; with w = 1 it is the
/// adjoint of `analyze`.
inline void synthesize(const double* re, const double* im, std::size_t t_len,
                       std::size_t n_series, const double* weights,
                       double* out) {
  const std::size_t f_len = half_bins(t_len);
  auto tab = trig_tables(t_len);
  DoubleVec wre(f_len * n_series), wim(f_len * n_series);
  for (std::size_t f = 0; f < f_len; ++f) {
    const double w = weights[f];
    for (std::size_t s = 0; s < n_series; ++s) {
      wre[f * n_series + s] = w * re[f * n_series + s];
      wim[f * n_series + s] = w * im[f * n_series + s];
    }
  }
  // out = cos^T * wre - sin^T * wim  (cos/sin stored [F,T])
  gemm(true, false, t_len, n_series, f_len, tab->cos_ft.data(), wre.data(), out,
       false);
  DoubleVec tmp(t_len * n_series);
  gemm(true, false, t_len, n_series, f_len, tab->sin_ft.data(), wim.data(),
       tmp.data(), false);
  for (std::size_t i = 0; i < t_len * n_series; ++i) out[i] -= tmp[i];
}

/// Inverse-transform weights: 1/T at bin 0 (and T/2 when T is even), 2/T at
/// the interior bins whose conjugate halves were dropped.
inline std::vector<double> inverse_weights(std::size_t t_len) {
  const std::size_t f_len = half_bins(t_len);
  std::vector<double> w(f_len, 2.0 / static_cast<double>(t_len));
  w[0] = 1.0 / static_cast<double>(t_len);
  if (t_len % 2 == 0) w[f_len - 1] = 1.0 / static_cast<double>(t_len);
  return w;
}

inline void check_3d(const Tensor& x, const char* who) {
  if (x.rank() != 3) {
    throw ShapeError(std::string(who) + ": expected rank-3 [T,N,D], got " +
                     shape_str(x.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Naive DFT (the correctness oracle)
// ---------------------------------------------------------------------------

/// Direct O(T^2) discrete Fourier transform of a real sequence; returns all T
/// complex bins. This is the reference that fft_real is tested against.
inline std::vector<std::complex<double>> dft_naive(
    const std::vector<double>& x) {
  const std::size_t t_len = x.size();
  std::vector<std::complex<double>> out(t_len);
  for (std::size_t f = 0; f < t_len; ++f) {
    double re = 0.0, im = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) {
      const double angle =
          2.0 * M_PI * static_cast<double>((f * t) % t_len) /
          static_cast<double>(t_len);
      re += x[t] * std::cos(angle);
      im -= x[t] * std::sin(angle);
    }
    out[f] = {re, im};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Real FFT / inverse
// ---------------------------------------------------------------------------

/// Forward transform along the time axis of x [T,N,D], independently per
/// (n,d) series; keeps bins 0..floor(T/2).
inline ComplexSpectrum fft_real(const Tensor& x) {
  detail::check_3d(x, "fft_real");
  const std::size_t t_len = x.extent(0);
  const std::size_t n_series = x.extent(1) * x.extent(2);
  const std::size_t f_len = half_bins(t_len);
  ComplexSpectrum spec;
  spec.n_points = t_len;
  spec.re = Tensor::uninit({f_len, x.extent(1), x.extent(2)});
  spec.im = Tensor::uninit({f_len, x.extent(1), x.extent(2)});
  detail::analyze(x.data(), t_len, n_series, spec.re.data(), spec.im.data());
  return spec;
}

/// Element-wise complex modulation of a spectrum by a filter.
inline ComplexSpectrum apply_filter(const ComplexSpectrum& spec,
                                    const SpectralFilter& filt) {
  if (!spec.re.same_shape(filt.re) || !spec.im.same_shape(filt.im)) {
    throw ShapeError("apply_filter: filter shape " + shape_str(filt.re.shape()) +
                     " does not match spectrum " + shape_str(spec.re.shape()));
  }
  ComplexSpectrum out;
  out.n_points = spec.n_points;
  out.re = Tensor::uninit(spec.re.shape());
  out.im = Tensor::uninit(spec.im.shape());
  for (std::size_t i = 0; i < spec.re.numel(); ++i) {
    const double a = spec.re[i], b = spec.im[i];
    const double c = filt.re[i], d = filt.im[i];
    out.re[i] = a * c - b * d;
    out.im[i] = a * d + b * c;
  }
  return out;
}

namespace detail {
inline void check_pinned(const Tensor& im, std::size_t t_len, const char* who) {
  const std::size_t f_len = im.extent(0);
  const std::size_t plane = im.extent(1) * im.extent(2);
  const double tol = 1e-9;
  for (std::size_t i = 0; i < plane; ++i) {
    if (std::abs(im[i]) > tol) {
      throw ValueError(std::string(who) +
                       ": imaginary part of bin 0 must be 0 for a real result");
    }
  }
  if (t_len % 2 == 0) {
    const double* top = im.data() + (f_len - 1) * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      if (std::abs(top[i]) > tol) {
        throw ValueError(std::string(who) +
                         ": imaginary part of the T/2 bin must be 0 for a real "
                         "result");
      }
    }
  }
}
}  // namespace detail

/// Real inverse transform of a half spectrum back to [T,N,D]. Requires the
/// pinned-bin invariant (zero imaginary part at 0 and T/2), which guarantees
/// the full-spectrum extension is Hermitian and the result real.
inline Tensor ifft_real(const ComplexSpectrum& spec, std::size_t t_len) {
  if (spec.n_bins() != half_bins(t_len)) {
    throw ShapeError("ifft_real: spectrum has " + std::to_string(spec.n_bins()) +
                     " bins, expected " + std::to_string(half_bins(t_len)) +
                     " for T=" + std::to_string(t_len));
  }
  detail::check_pinned(spec.im, t_len, "ifft_real");
  Tensor out = Tensor::uninit({t_len, spec.re.extent(1), spec.re.extent(2)});
  const std::size_t n_series = spec.re.extent(1) * spec.re.extent(2);
  std::vector<double> w = detail::inverse_weights(t_len);
  detail::synthesize(spec.re.data(), spec.im.data(), t_len, n_series, w.data(),
                     out.data());
  return out;
}

// ---------------------------------------------------------------------------
// Cyclic convolution and the filter <-> kernel bridge
// ---------------------------------------------------------------------------

/// Direct modular-index convolution, per (n,d):
/// out[t] = sum_m kernel[m] * x[(t - m) mod T]. O(T^2); the equivalence
/// oracle for the FFT -> filter -> IFFT path.
inline Tensor cyclic_convolve(const CyclicKernel& kernel, const Tensor& x) {
  detail::check_3d(x, "cyclic_convolve");
  if (!kernel.values.same_shape(x)) {
    throw ShapeError("cyclic_convolve: kernel " +
                     shape_str(kernel.values.shape()) + " vs signal " +
                     shape_str(x.shape()));
  }
  const std::size_t t_len = x.extent(0);
  const std::size_t plane = x.extent(1) * x.extent(2);
  Tensor out(x.shape());
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t m = 0; m < t_len; ++m) {
      const std::size_t src = (t + t_len - m) % t_len;
      const double* kp = kernel.values.data() + m * plane;
      const double* xp = x.data() + src * plane;
      double* op = out.data() + t * plane;
      for (std::size_t i = 0; i < plane; ++i) op[i] += kp[i] * xp[i];
    }
  }
  return out;
}

/// Real cyclic kernel whose transform is the filter: the inverse transform of
/// the filter planes. Requires the pinned-bin invariant.
inline CyclicKernel filter_to_kernel(const SpectralFilter& filt,
                                     std::size_t t_len) {
  detail::check_pinned(filt.im, t_len, "filter_to_kernel");
  ComplexSpectrum as_spec;
  as_spec.n_points = t_len;
  as_spec.re = filt.re;
  as_spec.im = filt.im;
  CyclicKernel kernel;
  kernel.values = ifft_real(as_spec, t_len);
  return kernel;
}

/// Transform -> modulate -> inverse-transform in one call; the spectral stage
/// of the model, also usable standalone.
inline Tensor spectral_apply(const Tensor& x, const SpectralFilter& filt) {
  return ifft_real(apply_filter(fft_real(x), filt), x.extent(0));
}

}  // namespace fsta
