#pragma once

// Backbone encoder: per-timestep linear lift D -> D', a stack of residual
// blocks h <- h + Conv(act(Conv(h))) with causal convolutions dilated by
// 2^i in block i, and a kernel-1 projection D' -> K.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "mff/autodiff.hpp"
#include "mff/error.hpp"

namespace mff::encoder {

enum class Activation { silu, gelu };

struct BackboneConfig {
  std::size_t input_dim = 1;
  std::size_t hidden_dim = 32;
  std::size_t output_dim = 320;
  std::size_t num_blocks = 8;
  std::size_t kernel_size = 3;
  double dropout_rate = 0.1;
  Activation activation = Activation::silu;

  void validate() const {
    if (input_dim < 1 || hidden_dim < 1) throw ParameterError("backbone dimensions must be positive");
    if (output_dim < 2 || output_dim % 2 != 0) {
      throw ParameterError("backbone output_dim must be even, got " + std::to_string(output_dim));
    }
    if (num_blocks < 1) throw ParameterError("backbone needs at least one block");
    if (kernel_size < 1) throw ParameterError("backbone kernel_size must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ParameterError("backbone dropout must lie in [0, 1)");
  }
};

/// Training flag plus the seed that drives every dropout mask in one pass.
struct ForwardMode {
  bool training = false;
  std::uint64_t seed = 0;
};

inline Var use_param(Tape& tape, ParameterSet& params, const std::string& name) { return tape.param(params.get(name)); }

/// Uniform(-sqrt(3/fan_in), sqrt(3/fan_in)): unit-gain Kaiming init.
inline Tensor kaiming_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), -bound, bound, rng);
}

inline std::string block_prefix(std::size_t i) { return "backbone.block" + std::to_string(i); }

inline void make_backbone(const BackboneConfig& cfg, std::mt19937_64& rng, ParameterSet& params) {
  cfg.validate();
  const std::size_t D = cfg.input_dim, H = cfg.hidden_dim, K = cfg.output_dim, k = cfg.kernel_size;
  params.add("backbone.input.weight", kaiming_uniform({D, H}, D, rng));
  params.add("backbone.input.bias", Tensor::zeros({H}), true);
  for (std::size_t i = 0; i < cfg.num_blocks; ++i) {
    const std::string p = block_prefix(i);
    params.add(p + ".conv1.weight", kaiming_uniform({k, H, H}, k * H, rng));
    params.add(p + ".conv1.bias", Tensor::zeros({H}), true);
    params.add(p + ".conv2.weight", kaiming_uniform({k, H, H}, k * H, rng));
    params.add(p + ".conv2.bias", Tensor::zeros({H}), true);
  }
  params.add("backbone.projection.weight", kaiming_uniform({1, H, K}, H, rng));
  params.add("backbone.projection.bias", Tensor::zeros({K}), true);
}

inline ParameterSet make_backbone(const BackboneConfig& cfg, std::uint64_t init_seed) {
  std::mt19937_64 rng(init_seed);
  ParameterSet params;
  make_backbone(cfg, rng, params);
  return params;
}

/// Closed-form scalar count of make_backbone's parameters.
inline std::size_t backbone_parameter_count(const BackboneConfig& cfg) {
  const std::size_t D = cfg.input_dim, H = cfg.hidden_dim, K = cfg.output_dim, k = cfg.kernel_size;
  return (D * H + H) + cfg.num_blocks * 2 * (k * H * H + H) + (H * K + K);
}

/// Number of input steps one output step can see.
inline std::size_t receptive_field(const BackboneConfig& cfg) {
  return 1 + (cfg.kernel_size - 1) * 2 * ((std::size_t{1} << cfg.num_blocks) - 1);
}

inline Var activate(const Var& x, Activation a) { return a == Activation::silu ? silu(x) : gelu(x); }

/// x is T x D; returns r, T x K.
inline Var encode(Tape& tape, ParameterSet& params, const BackboneConfig& cfg, const Var& x, const ForwardMode& mode) {
  if (x.value().rank() != 2 || x.dim(1) != cfg.input_dim) {
    throw DimensionError("encoder expects T x " + std::to_string(cfg.input_dim) + " input, got " +
                         shape_str(x.shape()));
  }
  Var h = add_row_bias(matmul(x, use_param(tape, params, "backbone.input.weight")),
                       use_param(tape, params, "backbone.input.bias"));
  std::size_t dilation = 1;
  for (std::size_t i = 0; i < cfg.num_blocks; ++i, dilation *= 2) {
    const std::string p = block_prefix(i);
    Var a = add_row_bias(causal_conv1d(h, use_param(tape, params, p + ".conv1.weight"), dilation),
                         use_param(tape, params, p + ".conv1.bias"));
    a = activate(a, cfg.activation);
    a = add_row_bias(causal_conv1d(a, use_param(tape, params, p + ".conv2.weight"), dilation),
                     use_param(tape, params, p + ".conv2.bias"));
    h = add(h, a);
  }
  Var r = add_row_bias(causal_conv1d(h, use_param(tape, params, "backbone.projection.weight"), 1),
                       use_param(tape, params, "backbone.projection.bias"));
  return dropout(r, cfg.dropout_rate, mode.seed, mode.training);
}

}  // namespace mff::encoder
