#pragma once

// Joint optimization: two augmented views per window, backbone, both
// modules, fusion, and L_total = gamma1 * L_time + gamma2 * L_freq.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mff/augment.hpp"
#include "mff/dataio.hpp"
#include "mff/model.hpp"

namespace mff {

struct TrainConfig {
  double gamma1 = 1.0;
  double gamma2 = 1.0;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t epochs = 600;
  std::size_t batch_size = 128;
  std::size_t stride = 1;  // step between consecutive training windows
  std::uint64_t seed = 0;
  augment::AugmentConfig augment;
  AblationFlags ablation;

  void validate() const {
    if (!(gamma1 >= 0.0) || !(gamma2 >= 0.0)) throw ParameterError("loss weights gamma1, gamma2 must be >= 0");
    if (!(learning_rate >= 0.0)) throw ParameterError("learning_rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ParameterError("weight_decay must be >= 0");
    if (batch_size < 2) throw ParameterError("batch_size must be >= 2, got " + std::to_string(batch_size));
    if (stride < 1) throw ParameterError("train stride must be >= 1");
    augment.validate();
  }
};

/// SplitMix64 finalizer; derives independent seeds from (seed, index) pairs.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

struct LossTerms {
  Var total;
  Var time;
  Var freq;  // a constant zero when the frequency module is disabled
};

/// Loss of one batch. `windows` are T x D tensors; `step_seed` drives the
/// augmentation draws and dropout masks of the whole step.
inline LossTerms total_loss(Tape& tape, Model& model, const std::vector<Tensor>& windows, const TrainConfig& cfg,
                            std::uint64_t step_seed, bool training = true) {
  if (windows.empty()) throw ContractError("total_loss: empty batch");
  const ModelConfig& mc = model.config;
  const AblationFlags& ab = cfg.ablation;
  encoder::BackboneConfig bb = mc.backbone;
  if (ab.activation_gelu) bb.activation = encoder::Activation::gelu;
  const std::size_t half = bb.output_dim / 2;

  Var time_sum = tape.constant(Tensor({1}));
  std::vector<std::pair<ComplexVar, ComplexVar>> spectra;
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const Tensor& x = windows[b];
    const std::uint64_t window_seed = mix_seed(step_seed, b);
    augment::AugmentConfig aug = cfg.augment;
    aug.seed = mix_seed(cfg.augment.seed, window_seed);

    std::vector<ComplexVar> view_spectra;
    Var view_sum = tape.constant(Tensor({1}));
    for (std::uint64_t v = 1; v <= 2; ++v) {
      const Tensor input = ab.disable_augmentation ? x : augment::augment_view(x, aug, v);
      const encoder::ForwardMode mode{training, mix_seed(window_seed, 10 + v)};
      Var r = encoder::encode(tape, model.params, bb, tape.constant(input), mode);
      const std::size_t T = r.dim(0);

      Var h_hat = tape.constant(Tensor({T, half}));
      if (!ab.disable_facm) {
        facm::FacmOutput fo = facm::facm_forward(tape, model.params, mc.facm, r, mode);
        h_hat = fo.h_hat;
        view_spectra.push_back(fo.spectrum);
      }
      Var h_tilde = ab.disable_ctcm ? tape.constant(Tensor({T, half}))
                                    : ctcm::ctcm_forward(tape, model.params, mc.ctcm, r);
      Var h = ctcm::fuse(tape, model.params, h_tilde, h_hat);
      view_sum = add(view_sum, ctcm::time_contrastive_loss(r, h));
    }
    time_sum = add(time_sum, scale(view_sum, 0.5));
    if (!ab.disable_facm) spectra.emplace_back(view_spectra[0], view_spectra[1]);
  }

  Var l_time = scale(time_sum, 1.0 / static_cast<double>(windows.size()));
  if (ab.disable_facm) return {scale(l_time, cfg.gamma1), l_time, tape.constant(Tensor({1}))};
  Var l_freq = facm::freq_contrastive_loss(spectra, mc.facm.lambda).total;
  return {add(scale(l_time, cfg.gamma1), scale(l_freq, cfg.gamma2)), l_time, l_freq};
}

/// Momentum SGD with L2 weight decay folded into the gradient:
/// v <- momentum * v + grad + W * p;  p <- p - lr * v. Exempt parameters
/// skip the W term. `velocity` is created on first use.
inline void sgd_step(ParameterSet& params, std::vector<Tensor>& velocity, double lr, double momentum,
                     double weight_decay) {
  if (velocity.size() != params.size()) {
    velocity.clear();
    for (std::size_t i = 0; i < params.size(); ++i) velocity.push_back(Tensor::zeros(params[i].value.shape()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = params[k];
    Tensor& v = velocity[k];
    if (v.shape() != p.value.shape()) throw ContractError("sgd: parameter " + p.name + " changed shape");
    const double w = p.decay_exempt ? 0.0 : weight_decay;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      v[i] = momentum * v[i] + p.grad[i] + w * p.value[i];
      p.value[i] -= lr * v[i];
    }
  }
}

struct EpochLoss {
  double total = 0.0;
  double time = 0.0;
  double freq = 0.0;
};

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double total = 0.0;
  double time = 0.0;
  double freq = 0.0;
};

using StepObserver = std::function<void(const StepRecord&)>;

struct FitResult {
  std::vector<EpochLoss> history;
  std::uint64_t epochs_completed = 0;
  std::string rng_state;
};

inline std::string rng_state_text(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

/// Trains on the windows of `range` in `table`. Batches are reshuffled every
/// epoch from a generator seeded with cfg.seed.
inline FitResult fit(Model& model, const data::SeriesTable& table, const data::RowRange& range,
                     const TrainConfig& cfg, const StepObserver& observer = {}) {
  cfg.validate();
  if (table.features() != model.config.backbone.input_dim) {
    throw DimensionError("model expects " + std::to_string(model.config.backbone.input_dim) +
                         " input features, data has " + std::to_string(table.features()));
  }
  const std::size_t T = model.config.window;
  FitResult result;
  std::mt19937_64 rng(cfg.seed);
  if (cfg.epochs == 0) {
    result.rng_state = rng_state_text(rng);
    return result;
  }
  if (range.length() < T) {
    throw ConfigError("insufficient data: training split has " + std::to_string(range.length()) +
                      " rows, window length is " + std::to_string(T));
  }
  std::vector<std::size_t> starts = data::window_starts(range, T, cfg.stride);
  if (starts.size() < cfg.batch_size) {
    throw ConfigError("insufficient data: " + std::to_string(starts.size()) + " training windows for batch size " +
                      std::to_string(cfg.batch_size));
  }

  std::vector<Tensor> velocity;
  std::size_t global_step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(starts.begin(), starts.end(), rng);
    EpochLoss sum;
    std::size_t steps = 0;
    for (std::size_t pos = 0; pos < starts.size(); pos += cfg.batch_size) {
      const std::size_t end = std::min(starts.size(), pos + cfg.batch_size);
      if (end - pos < 2) break;  // a lone window has no in-batch partner
      std::vector<Tensor> batch;
      for (std::size_t i = pos; i < end; ++i) batch.push_back(data::window_at(table, starts[i], T));

      const std::uint64_t step_seed = rng();
      model.params.zero_grad();
      Tape tape;
      LossTerms loss = total_loss(tape, model, batch, cfg, step_seed, true);
      const double total = loss.total.value()[0];
      if (!std::isfinite(total)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(steps));
      }
      tape.backward(loss.total);
      sgd_step(model.params, velocity, cfg.learning_rate, cfg.momentum, cfg.weight_decay);

      StepRecord rec{epoch, global_step++, total, loss.time.value()[0], loss.freq.value()[0]};
      if (observer) observer(rec);
      sum.total += rec.total;
      sum.time += rec.time;
      sum.freq += rec.freq;
      ++steps;
    }
    const double inv = 1.0 / static_cast<double>(steps);
    result.history.push_back({sum.total * inv, sum.time * inv, sum.freq * inv});
    ++result.epochs_completed;
  }
  result.rng_state = rng_state_text(rng);
  return result;
}

/// Mean loss over the windows of `range` without updating anything; dropout
/// off, augmentation draws fixed by `seed`.
inline EpochLoss evaluate_loss(Model& model, const data::SeriesTable& table, const data::RowRange& range,
                               const TrainConfig& cfg, std::uint64_t seed = 0) {
  const std::size_t T = model.config.window;
  const std::vector<std::size_t> starts = data::window_starts(range, T, cfg.stride);
  EpochLoss sum;
  std::size_t steps = 0;
  for (std::size_t pos = 0; pos + 1 < starts.size(); pos += cfg.batch_size) {
    const std::size_t end = std::min(starts.size(), pos + cfg.batch_size);
    std::vector<Tensor> batch;
    for (std::size_t i = pos; i < end; ++i) batch.push_back(data::window_at(table, starts[i], T));
    Tape tape(false);
    LossTerms loss = total_loss(tape, model, batch, cfg, mix_seed(seed, steps), false);
    sum.total += loss.total.value()[0];
    sum.time += loss.time.value()[0];
    sum.freq += loss.freq.value()[0];
    ++steps;
  }
  if (steps == 0) throw ConfigError("evaluate_loss: fewer than two windows in range");
  const double inv = 1.0 / static_cast<double>(steps);
  return {sum.total * inv, sum.time * inv, sum.freq * inv};
}

/// Continues training a pretrained model on new data. A different feature
/// count is an error unless `reinit_input` is set, in which case only the
/// input projection is redrawn.
inline FitResult fine_tune(Model& model, const data::SeriesTable& table, const data::RowRange& range,
                           const TrainConfig& cfg, bool reinit_input, const StepObserver& observer = {}) {
  if (table.features() != model.config.backbone.input_dim) {
    if (!reinit_input) {
      throw DimensionError("pretrained model expects " + std::to_string(model.config.backbone.input_dim) +
                           " input features but the fine-tuning data has " + std::to_string(table.features()) +
                           "; re-initialize the input linear layer (--reinit-input) to continue");
    }
    reinit_input_layer(model, table.features(), mix_seed(cfg.seed, 0x696e));
  }
  return fit(model, table, range, cfg, observer);
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// "MFFCKPT\0" | u32 version | u64 len + config text | u64 epoch
// | u64 len + rng state | u64 param count | per param: u32 name len, name,
// u8 decay exempt, u32 rank, u64 dims..., f64 payload. All little-endian.

inline constexpr char kCheckpointMagic[8] = {'M', 'F', 'F', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_text;
  std::uint64_t epoch = 0;
  std::string rng_state;
  ParameterSet params;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ParseError("checkpoint truncated");
  return v;
}

inline std::string get_bytes(std::istream& in, std::uint64_t n) {
  if (n > (std::uint64_t{1} << 32)) throw ParseError("checkpoint field length " + std::to_string(n) + " is implausible");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw ParseError("checkpoint truncated");
  return s;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, std::ostream& out) {
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put_string(out, ck.config_text);
  detail::put<std::uint64_t>(out, ck.epoch);
  detail::put_string(out, ck.rng_state);
  detail::put<std::uint64_t>(out, ck.params.size());
  for (std::size_t k = 0; k < ck.params.size(); ++k) {
    const Parameter& p = ck.params[k];
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put<std::uint8_t>(out, p.decay_exempt ? 1 : 0);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) detail::put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(p.value.raw()), static_cast<std::streamsize>(p.value.size() * 8));
  }
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint '" + path.string() + "' for writing");
  save_checkpoint(ck, out);
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) throw ParseError("not a checkpoint file");
  const auto version = detail::get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config_text = detail::get_bytes(in, detail::get<std::uint64_t>(in));
  ck.epoch = detail::get<std::uint64_t>(in);
  ck.rng_state = detail::get_bytes(in, detail::get<std::uint64_t>(in));
  const auto count = detail::get<std::uint64_t>(in);
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name = detail::get_bytes(in, detail::get<std::uint32_t>(in));
    const bool exempt = detail::get<std::uint8_t>(in) != 0;
    const auto rank = detail::get<std::uint32_t>(in);
    if (rank == 0 || rank > 4) throw ParseError("parameter '" + name + "' has unsupported rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(detail::get<std::uint64_t>(in));
    Tensor value(shape);
    in.read(reinterpret_cast<char*>(value.raw()), static_cast<std::streamsize>(value.size() * 8));
    if (!in) throw ParseError("checkpoint truncated in parameter '" + name + "'");
    ck.params.add(std::move(name), std::move(value), exempt);
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  return load_checkpoint(in);
}

/// Copies checkpoint weights into a freshly constructed model of matching
/// layout.
inline void restore_parameters(Model& model, const ParameterSet& saved) {
  if (saved.size() != model.params.size()) {
    throw DimensionError("checkpoint holds " + std::to_string(saved.size()) + " parameters, model expects " +
                         std::to_string(model.params.size()));
  }
  for (std::size_t k = 0; k < saved.size(); ++k) {
    Parameter& p = model.params[k];
    const Parameter& s = saved[k];
    if (p.name != s.name || p.value.shape() != s.value.shape()) {
      throw DimensionError("checkpoint parameter " + s.name + " " + shape_str(s.value.shape()) +
                           " does not match model parameter " + p.name + " " + shape_str(p.value.shape()));
    }
    p.value = s.value;
  }
}

}  // namespace mff
