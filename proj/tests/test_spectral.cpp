#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <vector>

#include "fsta/rng.hpp"
#include "fsta/spectral.hpp"

using namespace fsta;

namespace {

Tensor series_tensor(const std::vector<double>& x) {
  return Tensor({x.size(), 1, 1}, x);
}

Tensor random_signal(std::size_t t_len, std::size_t n, std::size_t d,
                     Rng& rng) {
  Tensor x({t_len, n, d});
  fill_uniform(x, -1.0, 1.0, rng);
  return x;
}

/// Random filter obeying the pinned-bin invariant.
SpectralFilter random_pinned_filter(std::size_t t_len, std::size_t n,
                                    std::size_t d, Rng& rng) {
  const std::size_t f_len = half_bins(t_len);
  SpectralFilter filt;
  filt.re = Tensor({f_len, n, d});
  filt.im = Tensor({f_len, n, d});
  fill_uniform(filt.re, -1.0, 1.0, rng);
  fill_uniform(filt.im, -1.0, 1.0, rng);
  const std::size_t plane = n * d;
  for (std::size_t i = 0; i < plane; ++i) filt.im[i] = 0.0;
  if (t_len % 2 == 0) {
    for (std::size_t i = 0; i < plane; ++i) {
      filt.im[(f_len - 1) * plane + i] = 0.0;
    }
  }
  return filt;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

}  // namespace

TEST_CASE("dft_naive frozen examples") {
  auto constant = dft_naive({1, 1, 1, 1});
  REQUIRE(constant[0] == std::complex<double>(4, 0));
  for (std::size_t f = 1; f < 4; ++f) {
    REQUIRE(std::abs(constant[f]) < 1e-12);
  }

  auto delta = dft_naive({1, 0, 0, 0});
  for (std::size_t f = 0; f < 4; ++f) {
    REQUIRE(std::abs(delta[f] - std::complex<double>(1, 0)) < 1e-12);
  }

  auto alt = dft_naive({1, 0, -1, 0});
  REQUIRE(std::abs(alt[0]) < 1e-12);
  REQUIRE(std::abs(alt[1] - std::complex<double>(2, 0)) < 1e-12);
  REQUIRE(std::abs(alt[2]) < 1e-12);
  REQUIRE(std::abs(alt[3] - std::complex<double>(2, 0)) < 1e-12);
}

TEST_CASE("fft_real matches dft_naive") {
  Rng rng(1);
  for (std::size_t t_len : {1u, 2u, 3u, 4u, 5u, 7u, 8u, 12u, 16u, 31u, 64u}) {
    std::vector<double> x(t_len);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    ComplexSpectrum spec = fft_real(series_tensor(x));
    auto want = dft_naive(x);
    REQUIRE(spec.n_bins() == half_bins(t_len));
    for (std::size_t f = 0; f < spec.n_bins(); ++f) {
      INFO("T=" << t_len << " f=" << f);
      REQUIRE(std::abs(spec.re[f] - want[f].real()) < 1e-10);
      REQUIRE(std::abs(spec.im[f] - want[f].imag()) < 1e-10);
    }
  }
}

TEST_CASE("fft_real of zeros is zero and pinned bins are real") {
  Tensor z({16, 2, 2});
  ComplexSpectrum spec = fft_real(z);
  for (std::size_t i = 0; i < spec.re.numel(); ++i) {
    REQUIRE(spec.re[i] == 0.0);
    REQUIRE(spec.im[i] == 0.0);
  }

  Rng rng(2);
  Tensor x = random_signal(16, 2, 2, rng);
  ComplexSpectrum s2 = fft_real(x);
  const std::size_t plane = 4;
  for (std::size_t i = 0; i < plane; ++i) {
    REQUIRE(std::abs(s2.im[i]) < 1e-12);                       // bin 0
    REQUIRE(std::abs(s2.im[8 * plane + i]) < 1e-12);           // bin T/2
  }
}

TEST_CASE("Parseval identity") {
  Rng rng(3);
  for (std::size_t t_len : {8u, 12u, 16u, 100u, 500u}) {
    std::vector<double> x(t_len);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    ComplexSpectrum spec = fft_real(series_tensor(x));
    double time_energy = 0.0;
    for (double v : x) time_energy += v * v;
    double freq_energy = spec.re[0] * spec.re[0] + spec.im[0] * spec.im[0];
    const std::size_t f_hi = spec.n_bins() - 1;
    for (std::size_t f = 1; f < f_hi; ++f) {
      freq_energy +=
          2.0 * (spec.re[f] * spec.re[f] + spec.im[f] * spec.im[f]);
    }
    const double top = spec.re[f_hi] * spec.re[f_hi] + spec.im[f_hi] * spec.im[f_hi];
    freq_energy += (t_len % 2 == 0) ? top : 2.0 * top;
    freq_energy /= static_cast<double>(t_len);
    REQUIRE(std::abs(freq_energy - time_energy) / time_energy < 1e-9);
  }
}

TEST_CASE("fft_real linearity") {
  Rng rng(4);
  const std::size_t t_len = 24;
  Tensor x = random_signal(t_len, 2, 3, rng);
  Tensor y = random_signal(t_len, 2, 3, rng);
  const double a = 1.3, b = -0.7;
  Tensor combo = fsta::add(scale(x, a), scale(y, b));
  ComplexSpectrum sc = fft_real(combo);
  ComplexSpectrum sx = fft_real(x);
  ComplexSpectrum sy = fft_real(y);
  for (std::size_t i = 0; i < sc.re.numel(); ++i) {
    REQUIRE(std::abs(sc.re[i] - (a * sx.re[i] + b * sy.re[i])) < 1e-10);
    REQUIRE(std::abs(sc.im[i] - (a * sx.im[i] + b * sy.im[i])) < 1e-10);
  }
}

TEST_CASE("apply_filter complex arithmetic") {
  ComplexSpectrum spec;
  spec.n_points = 2;
  spec.re = Tensor({1, 1, 1}, {1.0});
  spec.im = Tensor({1, 1, 1}, {2.0});
  SpectralFilter filt{Tensor({1, 1, 1}, {3.0}), Tensor({1, 1, 1}, {-1.0})};
  ComplexSpectrum out = apply_filter(spec, filt);
  REQUIRE(out.re[0] == Catch::Approx(5.0));  // (1+2i)(3-i) = 5+5i
  REQUIRE(out.im[0] == Catch::Approx(5.0));

  Rng rng(5);
  Tensor x = random_signal(10, 2, 2, rng);
  ComplexSpectrum s = fft_real(x);
  SpectralFilter identity{Tensor::ones(s.re.shape()), Tensor::zeros(s.im.shape())};
  ComplexSpectrum si = apply_filter(s, identity);
  REQUIRE(max_abs_diff(si.re, s.re) == 0.0);
  REQUIRE(max_abs_diff(si.im, s.im) == 0.0);

  SpectralFilter zero{Tensor::zeros(s.re.shape()), Tensor::zeros(s.im.shape())};
  ComplexSpectrum sz = apply_filter(s, zero);
  for (std::size_t i = 0; i < sz.re.numel(); ++i) {
    REQUIRE(sz.re[i] == 0.0);
    REQUIRE(sz.im[i] == 0.0);
  }

  SpectralFilter bad{Tensor::ones({2, 1, 1}), Tensor::zeros({2, 1, 1})};
  REQUIRE_THROWS_AS(apply_filter(s, bad), ShapeError);
}

TEST_CASE("ifft_real round trip and special spectra") {
  Rng rng(6);
  for (std::size_t t_len : {4u, 5u, 8u, 16u, 500u}) {
    Tensor x = random_signal(t_len, 2, 2, rng);
    Tensor back = ifft_real(fft_real(x), t_len);
    INFO("T=" << t_len);
    REQUIRE(max_abs_diff(back, x) < 1e-10);
  }

  // DC-only spectrum with H0 = T gives the all-ones signal
  const std::size_t t_len = 12;
  ComplexSpectrum dc;
  dc.n_points = t_len;
  dc.re = Tensor::zeros({half_bins(t_len), 1, 1});
  dc.im = Tensor::zeros({half_bins(t_len), 1, 1});
  dc.re[0] = static_cast<double>(t_len);
  Tensor ones_sig = ifft_real(dc, t_len);
  for (std::size_t t = 0; t < t_len; ++t) {
    REQUIRE(ones_sig[t] == Catch::Approx(1.0).margin(1e-12));
  }

  dc.re[0] = 0.0;
  Tensor zero_sig = ifft_real(dc, t_len);
  for (std::size_t t = 0; t < t_len; ++t) REQUIRE(zero_sig[t] == 0.0);
}

TEST_CASE("ifft_real rejects pin violations") {
  const std::size_t t_len = 8;
  ComplexSpectrum spec;
  spec.n_points = t_len;
  spec.re = Tensor::zeros({5, 1, 1});
  spec.im = Tensor::zeros({5, 1, 1});
  spec.im[0] = 0.5;  // imaginary DC would make the output complex
  REQUIRE_THROWS_AS(ifft_real(spec, t_len), ValueError);

  spec.im[0] = 0.0;
  spec.im[4] = 0.5;  // T/2 bin
  REQUIRE_THROWS_AS(ifft_real(spec, t_len), ValueError);
}

TEST_CASE("cyclic_convolve sifting and identity") {
  Rng rng(7);
  const std::size_t t_len = 9;
  CyclicKernel kernel{random_signal(t_len, 2, 2, rng)};

  Tensor delta({t_len, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) delta[i] = 1.0;  // spike at t=0
  Tensor out = cyclic_convolve(kernel, delta);
  REQUIRE(max_abs_diff(out, kernel.values) < 1e-14);

  Tensor x = random_signal(t_len, 2, 2, rng);
  CyclicKernel id_kernel{Tensor::zeros({t_len, 2, 2})};
  for (std::size_t i = 0; i < 4; ++i) id_kernel.values[i] = 1.0;
  Tensor same = cyclic_convolve(id_kernel, x);
  REQUIRE(max_abs_diff(same, x) < 1e-14);
}

TEST_CASE("filter_to_kernel special filters") {
  const std::size_t t_len = 16;
  SpectralFilter flat{Tensor::ones({half_bins(t_len), 2, 1}),
                      Tensor::zeros({half_bins(t_len), 2, 1})};
  CyclicKernel k = filter_to_kernel(flat, t_len);
  for (std::size_t s = 0; s < 2; ++s) {
    REQUIRE(k.values.at({0, s, 0}) == Catch::Approx(1.0).margin(1e-12));
    for (std::size_t t = 1; t < t_len; ++t) {
      REQUIRE(std::abs(k.values.at({t, s, 0})) < 1e-12);
    }
  }

  SpectralFilter zero{Tensor::zeros({half_bins(t_len), 2, 1}),
                      Tensor::zeros({half_bins(t_len), 2, 1})};
  CyclicKernel kz = filter_to_kernel(zero, t_len);
  for (std::size_t i = 0; i < kz.values.numel(); ++i) {
    REQUIRE(kz.values[i] == 0.0);
  }
}

TEST_CASE("filter round trips through fft_real") {
  Rng rng(8);
  for (std::size_t t_len : {6u, 8u, 15u}) {
    SpectralFilter filt = random_pinned_filter(t_len, 2, 2, rng);
    CyclicKernel kernel = filter_to_kernel(filt, t_len);
    ComplexSpectrum back = fft_real(kernel.values);
    INFO("T=" << t_len);
    REQUIRE(max_abs_diff(back.re, filt.re) < 1e-10);
    REQUIRE(max_abs_diff(back.im, filt.im) < 1e-10);
  }
}

TEST_CASE("filtered transform equals cyclic convolution") {
  Rng rng(9);
  for (std::size_t t_len : {4u, 5u, 8u, 16u}) {
    for (int trial = 0; trial < 5; ++trial) {
      Tensor x = random_signal(t_len, 3, 2, rng);
      SpectralFilter filt = random_pinned_filter(t_len, 3, 2, rng);
      Tensor via_fft = spectral_apply(x, filt);
      Tensor via_conv = cyclic_convolve(filter_to_kernel(filt, t_len), x);
      INFO("T=" << t_len << " trial=" << trial);
      REQUIRE(max_abs_diff(via_fft, via_conv) < 1e-10);
    }
  }
}
