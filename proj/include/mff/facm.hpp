#pragma once

// Frequency-aware contrastive module.
//
// Forward: half-spectrum FFT of r (T x K) over time, keep the k bins with
// the largest channel-averaged amplitude and hard-zero the rest, apply the
// complex affine map F * omega + beta (c x K -> c x K/2), inverse FFT back
// to T x K/2, dropout.
//
// Loss: amplitude and phase of the reweighted spectra of the two views are
// contrasted bin against bin. For bin j the positive is the same bin of the
// other view, the negatives are every other bin k != j.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mff/autodiff.hpp"
#include "mff/encoder.hpp"
#include "mff/spectral.hpp"

namespace mff::facm {

struct FacmConfig {
  double mask_ratio = 0.4;  // fraction of bins kept
  double lambda = 0.5;      // amplitude vs phase weight
  double dropout_rate = 0.1;

  void validate() const {
    if (!(mask_ratio > 0.0 && mask_ratio <= 1.0)) {
      throw ParameterError("facm mask_ratio must lie in (0, 1], got " + std::to_string(mask_ratio));
    }
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("facm lambda must lie in [0, 1]");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ParameterError("facm dropout must lie in [0, 1)");
  }
};

/// Per-bin modulus averaged over the feature channels.
inline std::vector<double> mean_amplitude(const spectral::ComplexSpectrum& s) {
  std::vector<double> A(s.bins(), 0.0);
  for (std::size_t j = 0; j < s.bins(); ++j) {
    for (std::size_t f = 0; f < s.features; ++f) A[j] += std::abs(s.at(j, f));
    A[j] /= static_cast<double>(s.features);
  }
  return A;
}

inline std::vector<double> mean_amplitude(const ComplexVar& s) {
  const Tensor& re = s.re.value();
  const Tensor& im = s.im.value();
  const std::size_t c = s.bins(), F = s.features();
  std::vector<double> A(c, 0.0);
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t f = 0; f < F; ++f) A[j] += std::hypot(re(j, f), im(j, f));
    A[j] /= static_cast<double>(F);
  }
  return A;
}

/// k = max(1, floor(c * ratio)).
inline std::size_t topk_count(std::size_t bins, double ratio) {
  const auto k = static_cast<std::size_t>(std::floor(static_cast<double>(bins) * ratio + 1e-9));
  return std::clamp<std::size_t>(k, 1, bins);
}

/// Indices of the k largest entries, ascending; ties go to the lower index.
inline std::vector<std::size_t> select_topk(const std::vector<double>& A, double ratio) {
  if (A.empty()) throw ParameterError("select_topk: empty amplitude vector");
  const std::size_t k = topk_count(A.size(), ratio);
  std::vector<std::size_t> idx(A.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return A[a] > A[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// omega: K x K/2 complex, beta: c x K/2 complex, each stored as real and
/// imaginary parameter pairs. beta starts non-zero: a masked bin's output is
/// beta alone, and a near-zero beta would put its phase on the singularity.
inline void make_freq_params(std::size_t K, std::size_t T, std::mt19937_64& rng, ParameterSet& params) {
  const std::size_t half = K / 2, c = spectral::ComplexSpectrum::bins_for(T);
  const double bound = std::sqrt(3.0 / (2.0 * static_cast<double>(K)));
  params.add("facm.omega.real", Tensor::uniform({K, half}, -bound, bound, rng));
  params.add("facm.omega.imag", Tensor::uniform({K, half}, -bound, bound, rng));
  params.add("facm.beta.real", Tensor::uniform({c, half}, -bound, bound, rng), true);
  params.add("facm.beta.imag", Tensor::uniform({c, half}, -bound, bound, rng), true);
}

struct FacmOutput {
  Var h_hat;                          // T x K/2
  ComplexVar spectrum;                // c x K/2, reweighted, before the inverse FFT
  std::vector<std::size_t> selected;  // kept bins
};

/// (a_re + i a_im) * (w_re + i w_im) + (b_re + i b_im).
inline ComplexVar complex_affine(const ComplexVar& a, const Var& w_re, const Var& w_im, const Var& b_re,
                                 const Var& b_im) {
  Var re = add(sub(matmul(a.re, w_re), matmul(a.im, w_im)), b_re);
  Var im = add(add(matmul(a.re, w_im), matmul(a.im, w_re)), b_im);
  return ComplexVar{re, im, a.origin_length};
}

inline FacmOutput facm_forward(Tape& tape, ParameterSet& params, const FacmConfig& cfg, const Var& r,
                               const encoder::ForwardMode& mode) {
  cfg.validate();
  if (r.value().rank() != 2) throw ContractError("facm expects a T x K representation");
  const std::size_t T = r.dim(0), K = r.dim(1);
  Parameter& w_re = params.get("facm.omega.real");
  if (w_re.value.dim(0) != K) {
    throw ContractError("facm: representation width " + std::to_string(K) + " does not match omega " +
                        shape_str(w_re.value.shape()));
  }
  Parameter& b_re = params.get("facm.beta.real");
  if (b_re.value.dim(0) != spectral::ComplexSpectrum::bins_for(T)) {
    throw ContractError("facm: window length " + std::to_string(T) + " does not match beta " +
                        shape_str(b_re.value.shape()));
  }

  ComplexVar spec = rfft(r);
  std::vector<std::size_t> selected = select_topk(mean_amplitude(spec), cfg.mask_ratio);
  std::vector<bool> keep(spec.bins(), false);
  for (std::size_t j : selected) keep[j] = true;
  ComplexVar masked{mask_rows(spec.re, keep), mask_rows(spec.im, keep), T};

  ComplexVar weighted = complex_affine(masked, tape.param(w_re), encoder::use_param(tape, params, "facm.omega.imag"),
                                       tape.param(b_re), encoder::use_param(tape, params, "facm.beta.imag"));
  Var h = irfft(weighted);
  h = dropout(h, cfg.dropout_rate, mode.seed ^ 0x46414353ull, mode.training);
  return FacmOutput{h, weighted, std::move(selected)};
}

struct FreqLoss {
  Var amp;
  Var phase;
  Var total;
};

/// (1/c) * sum_j [ logsumexp_k (f1_j . f2_k) - f1_j . f2_j ] for row
/// features f1, f2 (c x n).
inline Var bin_contrast(const Var& f1, const Var& f2) {
  const double c = static_cast<double>(f1.dim(0));
  return scale(infonce_rows(matmul(f1, transpose(f2))), 1.0 / c);
}

/// Dual amplitude/phase loss over a batch of view pairs, averaged over the
/// batch. total = lambda * amp + (1 - lambda) * phase.
inline FreqLoss freq_contrastive_loss(const std::vector<std::pair<ComplexVar, ComplexVar>>& pairs, double lambda) {
  if (pairs.empty()) throw ContractError("freq_contrastive_loss: empty batch");
  Tape* tape = pairs.front().first.re.tape;
  Var amp_sum = tape->constant(Tensor({1}));
  Var phase_sum = tape->constant(Tensor({1}));
  for (const auto& [s1, s2] : pairs) {
    if (s1.re.shape() != s2.re.shape() || s1.im.shape() != s2.im.shape()) {
      throw ContractError("freq_contrastive_loss: view spectra differ in shape " + shape_str(s1.re.shape()) +
                          " vs " + shape_str(s2.re.shape()));
    }
    amp_sum = add(amp_sum, bin_contrast(amplitude(s1), amplitude(s2)));
    phase_sum = add(phase_sum, bin_contrast(phase(s1), phase(s2)));
  }
  const double inv = 1.0 / static_cast<double>(pairs.size());
  Var amp = scale(amp_sum, inv);
  Var ph = scale(phase_sum, inv);
  return FreqLoss{amp, ph, add(scale(amp, lambda), scale(ph, 1.0 - lambda))};
}

inline FreqLoss freq_contrastive_loss(const ComplexVar& s1, const ComplexVar& s2, double lambda) {
  return freq_contrastive_loss({{s1, s2}}, lambda);
}

}  // namespace mff::facm
