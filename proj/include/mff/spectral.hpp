#pragma once

// Real-input discrete Fourier transforms. Forward transforms are
// unnormalized, X[j] = sum_t x[t] exp(-2 pi i j t / T); inverses carry 1/T.
// Power-of-two lengths use an iterative radix-2 kernel, every other length
// goes through Bluestein's chirp-z reduction onto a power-of-two FFT.

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <vector>

#include "mff/error.hpp"
#include "mff/tensor.hpp"

namespace mff::spectral {

using cplx = std::complex<double>;

inline bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// Precomputed tables for complex FFTs of one length.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n) {
    if (n == 0) throw ParameterError("FFT length must be positive");
    if (is_pow2(n)) {
      init_radix2(n, twiddle_);
      return;
    }
    // Bluestein: w[k] = exp(-i pi k^2 / n); k^2 is reduced mod 2n so the
    // angle stays small and exact for large k.
    m_ = next_pow2(2 * n - 1);
    init_radix2(m_, twiddle_);
    chirp_.resize(n);
    const std::uint64_t two_n = 2 * static_cast<std::uint64_t>(n);
    for (std::size_t k = 0; k < n; ++k) {
      const std::uint64_t kk = (static_cast<std::uint64_t>(k) * k) % two_n;
      const double angle = -std::numbers::pi * static_cast<double>(kk) / static_cast<double>(n);
      chirp_[k] = cplx(std::cos(angle), std::sin(angle));
    }
    chirp_fft_.assign(m_, cplx(0.0, 0.0));
    chirp_fft_[0] = std::conj(chirp_[0]);
    for (std::size_t k = 1; k < n; ++k) {
      chirp_fft_[k] = std::conj(chirp_[k]);
      chirp_fft_[m_ - k] = std::conj(chirp_[k]);
    }
    radix2(chirp_fft_, false);
  }

  std::size_t size() const { return n_; }

  /// In-place forward transform (negative exponent, unnormalized).
  void forward(std::vector<cplx>& a) const {
    check(a);
    if (!m_) {
      radix2(a, false);
    } else {
      bluestein(a);
    }
  }

  /// In-place inverse transform (positive exponent), without the 1/n factor.
  void inverse_unnormalized(std::vector<cplx>& a) const {
    check(a);
    if (!m_) {
      radix2(a, true);
      return;
    }
    for (auto& v : a) v = std::conj(v);
    bluestein(a);
    for (auto& v : a) v = std::conj(v);
  }

 private:
  static void init_radix2(std::size_t n, std::vector<cplx>& tw) {
    tw.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      tw[k] = cplx(std::cos(angle), std::sin(angle));
    }
  }

  void check(const std::vector<cplx>& a) const {
    if (a.size() != n_) throw DimensionError("FFT buffer length does not match plan");
  }

  // Iterative Cooley-Tukey over the table in twiddle_ (built for length
  // n_ or m_, whichever is the power of two).
  void radix2(std::vector<cplx>& a, bool inverse) const {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
      std::size_t bit = n >> 1;
      for (; j & bit; bit >>= 1) j ^= bit;
      j ^= bit;
      if (i < j) std::swap(a[i], a[j]);
    }
    const std::size_t table = twiddle_.size() * 2;
    for (std::size_t len = 2; len <= n; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t step = table / len;
      for (std::size_t start = 0; start < n; start += len) {
        for (std::size_t k = 0; k < half; ++k) {
          cplx w = twiddle_[k * step];
          if (inverse) w = std::conj(w);
          const cplx u = a[start + k];
          const cplx v = a[start + k + half] * w;
          a[start + k] = u + v;
          a[start + k + half] = u - v;
        }
      }
    }
  }

  void bluestein(std::vector<cplx>& a) const {
    std::vector<cplx> buf(m_, cplx(0.0, 0.0));
    for (std::size_t k = 0; k < n_; ++k) buf[k] = a[k] * chirp_[k];
    radix2(buf, false);
    for (std::size_t k = 0; k < m_; ++k) buf[k] *= chirp_fft_[k];
    radix2(buf, true);
    const double scale = 1.0 / static_cast<double>(m_);
    for (std::size_t k = 0; k < n_; ++k) a[k] = buf[k] * scale * chirp_[k];
  }

  std::size_t n_;
  std::size_t m_ = 0;  // Bluestein convolution length; 0 on the radix-2 path
  std::vector<cplx> twiddle_;
  std::vector<cplx> chirp_;
  std::vector<cplx> chirp_fft_;
};

/// Non-redundant half spectrum of a real T x F signal: c = T/2 + 1 bins per
/// feature column, stored row-major as c x F.
struct ComplexSpectrum {
  std::size_t origin_length = 0;
  std::size_t features = 0;
  std::vector<cplx> values;

  ComplexSpectrum() = default;
  ComplexSpectrum(std::size_t length, std::size_t feats)
      : origin_length(length), features(feats), values(bins_for(length) * feats) {}

  static std::size_t bins_for(std::size_t length) { return length / 2 + 1; }

  std::size_t bins() const { return bins_for(origin_length); }
  cplx& at(std::size_t bin, std::size_t f) { return values[bin * features + f]; }
  const cplx& at(std::size_t bin, std::size_t f) const { return values[bin * features + f]; }

  bool well_formed() const {
    return origin_length >= 1 && features >= 1 && values.size() == bins() * features;
  }
};

struct AmpPhase {
  Tensor amplitude;  // c x F, non-negative
  Tensor phase;      // c x F, in (-pi, pi]
};

/// Column-wise forward transform of a T x F tensor.
inline ComplexSpectrum rfft(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("rfft expects a T x F tensor, got " + shape_str(x.shape()));
  const std::size_t T = x.dim(0);
  const std::size_t F = x.dim(1);
  if (T < 2) throw ParameterError("rfft needs at least 2 samples, got T=" + std::to_string(T));
  ComplexSpectrum out(T, F);
  const std::size_t c = out.bins();
  const FftPlan plan(T);
  std::vector<cplx> buf(T);
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t t = 0; t < T; ++t) buf[t] = cplx(x(t, f), 0.0);
    plan.forward(buf);
    for (std::size_t j = 0; j < c; ++j) out.at(j, f) = buf[j];
  }
  return out;
}

/// Inverse of rfft. The imaginary parts of bin 0 and, for even T, the
/// Nyquist bin are ignored, matching the conjugate-symmetric extension.
inline Tensor irfft(const ComplexSpectrum& s) {
  if (!s.well_formed()) throw ContractError("irfft: malformed spectrum");
  const std::size_t T = s.origin_length;
  const std::size_t F = s.features;
  const std::size_t c = s.bins();
  Tensor out({T, F});
  const FftPlan plan(T);
  std::vector<cplx> buf(T);
  const double inv = 1.0 / static_cast<double>(T);
  for (std::size_t f = 0; f < F; ++f) {
    buf[0] = cplx(s.at(0, f).real(), 0.0);
    for (std::size_t j = 1; j < c; ++j) buf[j] = s.at(j, f);
    if (T % 2 == 0) buf[T / 2] = cplx(s.at(T / 2, f).real(), 0.0);
    for (std::size_t j = 1; j < c; ++j) {
      if (T - j >= c) buf[T - j] = std::conj(buf[j]);
    }
    plan.inverse_unnormalized(buf);
    for (std::size_t t = 0; t < T; ++t) out(t, f) = buf[t].real() * inv;
  }
  return out;
}

/// Polar decomposition per bin. The phase of an exactly-zero bin is 0.
inline AmpPhase amp_phase(const ComplexSpectrum& s) {
  const std::size_t c = s.bins();
  AmpPhase ap{Tensor({c, s.features}), Tensor({c, s.features})};
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t f = 0; f < s.features; ++f) {
      const cplx v = s.at(j, f);
      ap.amplitude(j, f) = std::abs(v);
      double ph = (v.real() == 0.0 && v.imag() == 0.0) ? 0.0 : std::atan2(v.imag(), v.real());
      if (ph == -std::numbers::pi) ph = std::numbers::pi;
      ap.phase(j, f) = ph;
    }
  }
  return ap;
}

/// Direct O(T^2) evaluation with the rfft convention; the reference the
/// fast path is tested against.
inline ComplexSpectrum naive_dft(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("naive_dft expects a T x F tensor");
  const std::size_t T = x.dim(0);
  const std::size_t F = x.dim(1);
  ComplexSpectrum out(T, F);
  for (std::size_t j = 0; j < out.bins(); ++j) {
    for (std::size_t f = 0; f < F; ++f) {
      double re = 0.0;
      double im = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        const std::uint64_t jt = (static_cast<std::uint64_t>(j) * t) % T;
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(jt) / static_cast<double>(T);
        re += x(t, f) * std::cos(angle);
        im -= x(t, f) * std::sin(angle);
      }
      out.at(j, f) = cplx(re, im);
    }
  }
  return out;
}

}  // namespace mff::spectral
