#pragma once

// Complementary time-domain module and cross-domain fusion.
//
//   h_j   = causal Conv1d(r, kernel_j)          T x K for every scale j
//   h_D   = stack(h_1..h_n)                     K x n x T
//   h_2D  = Conv1x1(AvgPool_(n,1)(SiLU(Conv3x3(h_D))))   K/2 x 1 x T
//   h~    = Linear(flatten(h_2D))               T x K/2
//   h     = Linear(concat(h~, h^))              T x K

#include <random>
#include <string>
#include <vector>

#include "mff/autodiff.hpp"
#include "mff/encoder.hpp"

namespace mff::ctcm {

struct CtcmConfig {
  std::vector<std::size_t> kernels{1, 2, 4, 8, 16, 32, 64, 128};
  std::size_t msff_hidden = 96;

  void validate() const {
    if (kernels.empty()) throw ParameterError("ctcm needs at least one kernel");
    for (std::size_t i = 0; i < kernels.size(); ++i) {
      if (kernels[i] < 1) throw ParameterError("ctcm kernel sizes must be >= 1");
      if (i && kernels[i] <= kernels[i - 1]) throw ParameterError("ctcm kernel sizes must be strictly increasing");
    }
    if (msff_hidden < 1) throw ParameterError("ctcm msff_hidden must be positive");
  }
};

inline std::string scale_name(std::size_t kernel) { return "ctcm.scale_k" + std::to_string(kernel); }

inline void make_ctcm_params(std::size_t K, const CtcmConfig& cfg, std::mt19937_64& rng, ParameterSet& params) {
  cfg.validate();
  const std::size_t half = K / 2, Dh = cfg.msff_hidden;
  for (std::size_t k : cfg.kernels) {
    params.add(scale_name(k) + ".weight", encoder::kaiming_uniform({k, K, K}, k * K, rng));
    params.add(scale_name(k) + ".bias", Tensor::zeros({K}), true);
  }
  params.add("ctcm.msff.conv1.weight", encoder::kaiming_uniform({3, 3, K, Dh}, 9 * K, rng));
  params.add("ctcm.msff.conv1.bias", Tensor::zeros({Dh}), true);
  params.add("ctcm.msff.conv2.weight", encoder::kaiming_uniform({1, 1, Dh, half}, Dh, rng));
  params.add("ctcm.msff.conv2.bias", Tensor::zeros({half}), true);
  params.add("ctcm.projection.weight", encoder::kaiming_uniform({half, half}, half, rng));
  params.add("ctcm.projection.bias", Tensor::zeros({half}), true);
}

inline void make_fusion_params(std::size_t K, std::mt19937_64& rng, ParameterSet& params) {
  params.add("fusion.weight", encoder::kaiming_uniform({K, K}, K, rng));
  params.add("fusion.bias", Tensor::zeros({K}), true);
}

/// Parallel causal convolutions over r (T x K), one per kernel size, each
/// K -> K channels and left-padded so every scale keeps length T. Stacked
/// into K x n x T.
inline Var multiscale_conv(Tape& tape, ParameterSet& params, const Var& r, const std::vector<std::size_t>& kernels) {
  const std::size_t T = r.dim(0);
  std::vector<Var> scales;
  scales.reserve(kernels.size());
  for (std::size_t k : kernels) {
    if (k > T) {
      throw ParameterError("ctcm kernel " + std::to_string(k) + " exceeds window length " + std::to_string(T));
    }
    Var h = causal_conv1d(r, encoder::use_param(tape, params, scale_name(k) + ".weight"), 1);
    scales.push_back(add_row_bias(h, encoder::use_param(tape, params, scale_name(k) + ".bias")));
  }
  return stack_scales(scales);
}

/// K x n x T -> K/2 x 1 x T.
inline Var msff(Tape& tape, ParameterSet& params, const Var& h_d) {
  const std::size_t n = h_d.dim(1);
  Var a = add_channel_bias(conv2d(h_d, encoder::use_param(tape, params, "ctcm.msff.conv1.weight"), Padding::same),
                           encoder::use_param(tape, params, "ctcm.msff.conv1.bias"));
  a = silu(a);
  a = avg_pool2d(a, n, 1);
  return add_channel_bias(conv2d(a, encoder::use_param(tape, params, "ctcm.msff.conv2.weight"), Padding::same),
                          encoder::use_param(tape, params, "ctcm.msff.conv2.bias"));
}

/// r (T x K) -> h~ (T x K/2).
inline Var ctcm_forward(Tape& tape, ParameterSet& params, const CtcmConfig& cfg, const Var& r) {
  cfg.validate();
  Var h2d = msff(tape, params, multiscale_conv(tape, params, r, cfg.kernels));
  const std::size_t half = h2d.dim(0), T = h2d.dim(2);
  Var flat = transpose(reshape(h2d, {half, T}));
  return add_row_bias(matmul(flat, encoder::use_param(tape, params, "ctcm.projection.weight")),
                      encoder::use_param(tape, params, "ctcm.projection.bias"));
}

/// Linear(concat(h~, h^)): T x K/2 twice -> T x K.
inline Var fuse(Tape& tape, ParameterSet& params, const Var& h_tilde, const Var& h_hat) {
  if (h_tilde.dim(0) != h_hat.dim(0)) {
    throw ContractError("fuse: time lengths differ, " + shape_str(h_tilde.shape()) + " vs " +
                        shape_str(h_hat.shape()));
  }
  return add_row_bias(matmul(concat_cols(h_tilde, h_hat), encoder::use_param(tape, params, "fusion.weight")),
                      encoder::use_param(tape, params, "fusion.bias"));
}

/// sum_t -log( exp(r_t . h_t) / sum_t' exp(r_t . h_t') ): positives are the
/// same timestep, negatives every other timestep of the same window.
inline Var time_contrastive_loss(const Var& r, const Var& h) {
  if (r.shape() != h.shape()) {
    throw ContractError("time_contrastive_loss: shape mismatch " + shape_str(r.shape()) + " vs " +
                        shape_str(h.shape()));
  }
  return infonce_rows(matmul(r, transpose(h)));
}

}  // namespace mff::ctcm
