#pragma once

// Layered run configuration: defaults <- profile <- config file <- flags.
// Every value is held as text under a dotted key and type-checked when set;
// the resolved set serializes to canonical `key = value` lines (sorted), the
// form embedded in checkpoints and reports.
//
// File format: one `key = value` per line, `#` starts a comment, blank lines
// are ignored.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mff/dataio.hpp"
#include "mff/error.hpp"
#include "mff/evaluation.hpp"
#include "mff/model.hpp"
#include "mff/training.hpp"

namespace mff::config {

enum class KeyType { real, count, seed, boolean, text, count_list, real_list };

struct KeyInfo {
  std::string key;
  KeyType type;
  std::string default_value;
  std::string help;
};

inline const std::vector<KeyInfo>& keys() {
  static const std::vector<KeyInfo> k = {
      {"profile", KeyType::text, "desk", "named profile the run started from"},
      {"data.window", KeyType::count, "201", "lookback window length T"},
      {"data.train_stride", KeyType::count, "1", "step between training windows"},
      {"data.mode", KeyType::text, "multivariate", "multivariate or univariate"},
      {"augment.alpha", KeyType::real, "0.5", "scaling-noise strength"},
      {"augment.beta", KeyType::real, "0.1", "shift-noise strength"},
      {"augment.seed", KeyType::seed, "0", "augmentation seed"},
      {"backbone.input_dim", KeyType::count, "0", "input features; 0 takes the data width"},
      {"backbone.hidden_dim", KeyType::count, "32", "hidden width D'"},
      {"backbone.output_dim", KeyType::count, "320", "representation width K (even)"},
      {"backbone.num_blocks", KeyType::count, "8", "residual blocks L'"},
      {"backbone.kernel_size", KeyType::count, "3", "backbone convolution kernel"},
      {"backbone.activation", KeyType::text, "silu", "silu or gelu"},
      {"backbone.dropout", KeyType::real, "0.1", "dropout on the representation"},
      {"facm.mask_ratio", KeyType::real, "0.4", "fraction of frequency bins kept"},
      {"facm.lambda", KeyType::real, "0.5", "amplitude vs phase loss weight"},
      {"facm.dropout", KeyType::real, "0.1", "dropout after the inverse FFT"},
      {"ctcm.kernels", KeyType::count_list, "1,2,4,8,16,32,64,128", "causal kernel sizes"},
      {"ctcm.msff_hidden", KeyType::count, "96", "fusion hidden channels D''"},
      {"train.gamma1", KeyType::real, "1", "time loss weight"},
      {"train.gamma2", KeyType::real, "1", "frequency loss weight"},
      {"train.learning_rate", KeyType::real, "0.001", "SGD learning rate"},
      {"train.momentum", KeyType::real, "0.9", "SGD momentum"},
      {"train.weight_decay", KeyType::real, "0.0001", "weight decay W"},
      {"train.epochs", KeyType::count, "600", "training epochs"},
      {"train.batch_size", KeyType::count, "128", "windows per step"},
      {"train.seed", KeyType::seed, "0", "initialization and shuffling seed"},
      {"ablation.disable_augmentation", KeyType::boolean, "false", "identity views"},
      {"ablation.disable_facm_loss", KeyType::boolean, "false", "drop the frequency module and its loss"},
      {"ablation.disable_ctcm", KeyType::boolean, "false", "drop the time-domain module"},
      {"ablation.activation_gelu", KeyType::boolean, "false", "GELU instead of SiLU in the backbone"},
      {"eval.horizons", KeyType::count_list, "", "forecast horizons; empty uses the dataset grid"},
      {"eval.alphas", KeyType::real_list, "0.01,0.1,1,10,100", "ridge regularization grid"},
      {"robustness.noise_mean", KeyType::real, "10", "mean of injected noise"},
      {"robustness.noise_std", KeyType::real, "10", "std of injected noise"},
      {"robustness.seed", KeyType::seed, "0", "perturbation seed"},
      {"transfer.pretrain_epochs", KeyType::count, "600", "epochs on the source dataset"},
      {"transfer.finetune_epochs", KeyType::count, "300", "epochs on the target dataset"},
  };
  return k;
}

inline const KeyInfo* find_key(std::string_view key) {
  for (const auto& k : keys())
    if (k.key == key) return &k;
  return nullptr;
}

// Profiles override defaults. The paper-* profiles are the full-scale
// settings per dataset and mode (fusion width D'', hidden width D', depth L', W).
inline const std::map<std::string, std::map<std::string, std::string>>& profiles() {
  static const std::map<std::string, std::map<std::string, std::string>> p = {
      {"desk",
       {{"data.window", "64"},
        {"data.train_stride", "16"},
        {"backbone.hidden_dim", "16"},
        {"backbone.output_dim", "32"},
        {"backbone.num_blocks", "4"},
        {"ctcm.kernels", "1,2,4,8,16"},
        {"ctcm.msff_hidden", "16"},
        {"train.learning_rate", "0.00001"},
        {"train.epochs", "50"},
        {"train.batch_size", "16"},
        {"eval.horizons", "24,48"},
        {"transfer.pretrain_epochs", "20"},
        {"transfer.finetune_epochs", "10"}}},
      {"paper-ett-multivariate",
       {{"ctcm.msff_hidden", "96"}, {"backbone.hidden_dim", "32"}, {"backbone.num_blocks", "8"},
        {"train.weight_decay", "0.0001"}}},
      {"paper-ett-univariate",
       {{"data.mode", "univariate"}, {"ctcm.msff_hidden", "48"}, {"backbone.hidden_dim", "96"},
        {"backbone.num_blocks", "10"}, {"train.weight_decay", "0.00001"}}},
      {"paper-wth-multivariate",
       {{"ctcm.msff_hidden", "96"}, {"backbone.hidden_dim", "64"}, {"backbone.num_blocks", "8"},
        {"train.weight_decay", "0.0001"}}},
      {"paper-wth-univariate",
       {{"data.mode", "univariate"}, {"ctcm.msff_hidden", "96"}, {"backbone.hidden_dim", "64"},
        {"backbone.num_blocks", "8"}, {"train.weight_decay", "0.0001"}}},
  };
  return p;
}

/// "paper" is shorthand for the multivariate ETT row.
inline std::string canonical_profile(const std::string& name) {
  return name == "paper" ? "paper-ett-multivariate" : name;
}

// ---------------------------------------------------------------------------
// Value parsing

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  s = trim(s);
  if (s.empty()) return out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = s.find(',', pos);
    out.push_back(trim(s.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace detail

inline double parse_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  v = detail::trim(v);
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty() || !std::isfinite(out)) {
    throw ConfigError("'" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
  }
  return out;
}

inline std::uint64_t parse_unsigned(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  v = detail::trim(v);
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError("'" + std::string(key) + "' expects a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
  v = detail::trim(v);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("'" + std::string(key) + "' expects true or false, got '" + std::string(v) + "'");
}

inline std::vector<std::size_t> parse_count_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  for (auto item : detail::split_list(v)) out.push_back(parse_unsigned(key, item));
  return out;
}

inline std::vector<double> parse_real_list(std::string_view key, std::string_view v) {
  std::vector<double> out;
  for (auto item : detail::split_list(v)) out.push_back(parse_real(key, item));
  return out;
}

/// Checks that `value` parses as the key's type; returns it trimmed.
inline std::string check_value(const KeyInfo& info, std::string_view value) {
  value = detail::trim(value);
  switch (info.type) {
    case KeyType::real: parse_real(info.key, value); break;
    case KeyType::count:
    case KeyType::seed: parse_unsigned(info.key, value); break;
    case KeyType::boolean: return parse_bool(info.key, value) ? "true" : "false";
    case KeyType::count_list: parse_count_list(info.key, value); break;
    case KeyType::real_list: parse_real_list(info.key, value); break;
    case KeyType::text: break;
  }
  return std::string(value);
}

/// Splits `key = value` lines. Keys may use '-' for '_'.
inline std::vector<std::pair<std::string, std::string>> parse_kv(std::string_view text, const std::string& source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const std::size_t hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value', got '" +
                        std::string(line) + "'");
    }
    std::string key(detail::trim(line.substr(0, eq)));
    for (char& c : key)
      if (c == '-') c = '_';
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::move(key), std::string(detail::trim(line.substr(eq + 1))));
  }
  return out;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// ---------------------------------------------------------------------------

class RunConfig {
 public:
  /// Built-in defaults with no profile applied.
  static RunConfig defaults() {
    RunConfig c;
    for (const auto& k : keys()) c.values_[k.key] = k.default_value;
    return c;
  }

  /// Defaults overlaid with the named profile.
  static RunConfig from_profile(const std::string& name) {
    RunConfig c = defaults();
    c.apply_profile(name);
    return c;
  }

  /// Profile named by MFF_PROFILE, else "desk".
  static std::string default_profile() {
    const char* env = std::getenv("MFF_PROFILE");
    return env && *env ? std::string(env) : std::string("desk");
  }

  void apply_profile(const std::string& name) {
    const std::string canon = canonical_profile(name);
    auto it = profiles().find(canon);
    if (it == profiles().end()) {
      std::string known;
      for (const auto& [n, _] : profiles()) known += (known.empty() ? "" : ", ") + n;
      throw ConfigError("unknown profile '" + name + "' (known: paper, " + known + ")");
    }
    for (const auto& [k, v] : it->second) set(k, v);
    values_["profile"] = canon;
  }

  void set(std::string key, const std::string& value) {
    for (char& c : key)
      if (c == '-') c = '_';
    const KeyInfo* info = find_key(key);
    if (!info) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = check_value(*info, value);
  }

  /// Applies `key = value` text; a `profile` line is rejected because the
  /// profile is chosen before any file is read.
  void apply_text(std::string_view text, const std::string& source) {
    for (auto& [k, v] : parse_kv(text, source)) {
      if (k == "profile") throw ConfigError(source + ": select the profile with --profile or MFF_PROFILE");
      set(k, v);
    }
  }

  void apply_file(const std::filesystem::path& path) { apply_text(read_text_file(path), path.string()); }

  /// Parses canonical text (e.g. from a checkpoint), profile line included.
  static RunConfig from_text(std::string_view text, const std::string& source) {
    RunConfig c = defaults();
    for (auto& [k, v] : parse_kv(text, source)) c.set(k, v);
    return c;
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }
  double real(const std::string& key) const { return parse_real(key, get(key)); }
  std::size_t count(const std::string& key) const { return static_cast<std::size_t>(parse_unsigned(key, get(key))); }
  std::uint64_t seed(const std::string& key) const { return parse_unsigned(key, get(key)); }
  bool flag(const std::string& key) const { return parse_bool(key, get(key)); }
  std::vector<std::size_t> counts(const std::string& key) const { return parse_count_list(key, get(key)); }
  std::vector<double> reals(const std::string& key) const { return parse_real_list(key, get(key)); }

  const std::map<std::string, std::string>& values() const { return values_; }

  /// Sorted `key = value` lines.
  std::string to_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  eval::Mode mode() const { return eval::parse_mode(get("data.mode")); }

  AblationFlags ablation() const {
    return {flag("ablation.disable_augmentation"), flag("ablation.disable_facm_loss"), flag("ablation.disable_ctcm"),
            flag("ablation.activation_gelu")};
  }

  void set_ablation(const AblationFlags& f) {
    set("ablation.disable_augmentation", f.disable_augmentation ? "true" : "false");
    set("ablation.disable_facm_loss", f.disable_facm ? "true" : "false");
    set("ablation.disable_ctcm", f.disable_ctcm ? "true" : "false");
    set("ablation.activation_gelu", f.activation_gelu ? "true" : "false");
  }

  /// Model layout; backbone.input_dim must be resolved (non-zero).
  ModelConfig model_config() const {
    ModelConfig m;
    m.window = count("data.window");
    m.backbone.input_dim = count("backbone.input_dim");
    if (m.backbone.input_dim == 0) throw ConfigError("backbone.input_dim is unresolved");
    m.backbone.hidden_dim = count("backbone.hidden_dim");
    m.backbone.output_dim = count("backbone.output_dim");
    m.backbone.num_blocks = count("backbone.num_blocks");
    m.backbone.kernel_size = count("backbone.kernel_size");
    m.backbone.dropout_rate = real("backbone.dropout");
    const std::string& act = get("backbone.activation");
    if (act == "silu") {
      m.backbone.activation = encoder::Activation::silu;
    } else if (act == "gelu") {
      m.backbone.activation = encoder::Activation::gelu;
    } else {
      throw ConfigError("backbone.activation must be silu or gelu, got '" + act + "'");
    }
    if (flag("ablation.activation_gelu")) m.backbone.activation = encoder::Activation::gelu;
    m.facm.mask_ratio = real("facm.mask_ratio");
    m.facm.lambda = real("facm.lambda");
    m.facm.dropout_rate = real("facm.dropout");
    m.ctcm.kernels = counts("ctcm.kernels");
    m.ctcm.msff_hidden = count("ctcm.msff_hidden");
    return m;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.gamma1 = real("train.gamma1");
    t.gamma2 = real("train.gamma2");
    t.learning_rate = real("train.learning_rate");
    t.momentum = real("train.momentum");
    t.weight_decay = real("train.weight_decay");
    t.epochs = count("train.epochs");
    t.batch_size = count("train.batch_size");
    t.stride = count("data.train_stride");
    t.seed = seed("train.seed");
    t.augment.alpha = real("augment.alpha");
    t.augment.beta = real("augment.beta");
    t.augment.seed = seed("augment.seed");
    t.ablation = ablation();
    return t;
  }

  eval::EvalOptions eval_options() const {
    eval::EvalOptions e;
    e.horizons = counts("eval.horizons");
    e.alphas = reals("eval.alphas");
    e.mode = mode();
    return e;
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;

 private:
  std::map<std::string, std::string> values_;
};

/// defaults <- profile <- file <- flags.
inline RunConfig resolve(const std::string& profile, const std::filesystem::path& file,
                         const std::vector<std::pair<std::string, std::string>>& flags) {
  RunConfig c = RunConfig::from_profile(profile.empty() ? RunConfig::default_profile() : profile);
  if (!file.empty()) c.apply_file(file);
  for (const auto& [k, v] : flags) c.set(k, v);
  return c;
}

// ---------------------------------------------------------------------------
// Synthetic dataset specs
//
//   name = synthetic          length = 2000        seed = 1
//   noise_std = 0.1           start = 2016-07-01 00:00:00
//   step_seconds = 3600
//   feature.<name> = period:amplitude:phase, period:amplitude:phase
//   feature.<name>.slope = 0.01
//
// Features appear in the order of their first line; the last is the target.

inline data::SynthSpec parse_synth_spec(std::string_view text, const std::string& source) {
  data::SynthSpec spec;
  auto feature = [&](const std::string& name) -> data::SynthFeature& {
    for (auto& f : spec.features)
      if (f.name == name) return f;
    spec.features.push_back({name, {}, 0.0});
    return spec.features.back();
  };
  // Lines are split here rather than by parse_kv, which would rewrite '-'
  // inside feature names.
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no);
    if (const std::size_t hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key(detail::trim(line.substr(0, eq)));
    const std::string_view value = detail::trim(line.substr(eq + 1));
    if (key == "name") {
      spec.name = std::string(value);
    } else if (key == "length") {
      spec.length = parse_unsigned(key, value);
    } else if (key == "seed") {
      spec.seed = parse_unsigned(key, value);
    } else if (key == "noise_std") {
      spec.noise_std = parse_real(key, value);
    } else if (key == "start") {
      spec.start = std::string(value);
    } else if (key == "step_seconds") {
      spec.step_seconds = static_cast<std::int64_t>(parse_unsigned(key, value));
    } else if (key.rfind("feature.", 0) == 0) {
      std::string name = key.substr(8);
      if (name.size() > 6 && name.compare(name.size() - 6, 6, ".slope") == 0) {
        feature(name.substr(0, name.size() - 6)).slope = parse_real(key, value);
        continue;
      }
      if (name.empty()) throw ConfigError(where + ": feature needs a name");
      data::SynthFeature& f = feature(name);
      for (auto item : detail::split_list(value)) {
        std::vector<std::string_view> parts;
        std::size_t p = 0;
        while (true) {
          const std::size_t c = item.find(':', p);
          parts.push_back(item.substr(p, c == std::string_view::npos ? std::string_view::npos : c - p));
          if (c == std::string_view::npos) break;
          p = c + 1;
        }
        if (parts.size() != 3) throw ConfigError(where + ": component must be period:amplitude:phase");
        f.components.push_back({parse_real(key, parts[0]), parse_real(key, parts[1]), parse_real(key, parts[2])});
      }
    } else {
      throw ConfigError(where + ": unknown synthetic spec key '" + key + "'");
    }
  }
  if (spec.features.empty()) throw ConfigError(source + ": synthetic spec defines no features");
  if (spec.length == 0) throw ConfigError(source + ": synthetic spec needs length > 0");
  return spec;
}

}  // namespace mff::config
