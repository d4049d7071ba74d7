#pragma once

#include <cstdint>
#include <random>

#include "mff/autodiff.hpp"
#include "mff/ctcm.hpp"
#include "mff/encoder.hpp"
#include "mff/facm.hpp"

namespace mff {

/// Component switches for ablation runs. They compose freely.
struct AblationFlags {
  bool disable_augmentation = false;  // w/o DA: both views are the raw window
  bool disable_facm = false;          // w/o FM: no frequency branch, no L_freq
  bool disable_ctcm = false;          // w/o CM: no time branch
  bool activation_gelu = false;       // w/o Si: GELU in the backbone

  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct ModelConfig {
  std::size_t window = 201;  // T; the frequency bias is sized by T/2 + 1
  encoder::BackboneConfig backbone;
  facm::FacmConfig facm;
  ctcm::CtcmConfig ctcm;

  void validate() const {
    backbone.validate();
    facm.validate();
    ctcm.validate();
    if (window < 2) throw ParameterError("window length must be >= 2");
    if (ctcm.kernels.back() > window) {
      throw ParameterError("ctcm kernel " + std::to_string(ctcm.kernels.back()) + " exceeds window length " +
                           std::to_string(window));
    }
  }
};

struct Model {
  ModelConfig config;
  ParameterSet params;

  /// Initializes every parameter from one seed. The layout (and therefore
  /// the seed -> weights mapping) does not depend on ablation flags.
  static Model create(const ModelConfig& cfg, std::uint64_t init_seed) {
    cfg.validate();
    Model m{cfg, {}};
    std::mt19937_64 rng(init_seed);
    encoder::make_backbone(cfg.backbone, rng, m.params);
    facm::make_freq_params(cfg.backbone.output_dim, cfg.window, rng, m.params);
    ctcm::make_ctcm_params(cfg.backbone.output_dim, cfg.ctcm, rng, m.params);
    ctcm::make_fusion_params(cfg.backbone.output_dim, rng, m.params);
    return m;
  }

  /// Backbone representation r (T x K) for one window, inference mode.
  Tensor represent(const Tensor& window) {
    Tape tape(false);
    return encoder::encode(tape, params, config.backbone, tape.constant(window), {}).value();
  }
};

/// Re-draws the input projection for a new feature count, keeping every
/// other weight. Used when fine-tuning on data of a different width.
inline void reinit_input_layer(Model& model, std::size_t input_dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t H = model.config.backbone.hidden_dim;
  ParameterSet fresh;
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const Parameter& p = model.params[i];
    if (p.name == "backbone.input.weight") {
      fresh.add(p.name, encoder::kaiming_uniform({input_dim, H}, input_dim, rng), p.decay_exempt);
    } else {
      fresh.add(p.name, p.value, p.decay_exempt);
    }
  }
  model.params = std::move(fresh);
  model.config.backbone.input_dim = input_dim;
}

}  // namespace mff
