#pragma once

// Command workflows behind the `mff` executable: train, eval, ablate,
// robustness, transfer, synth. Each takes a resolved RunConfig and returns
// its artifacts; the executable only parses arguments, prints, and maps
// errors to exit codes.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mff/config.hpp"
#include "mff/dataio.hpp"
#include "mff/evaluation.hpp"
#include "mff/model.hpp"
#include "mff/training.hpp"

namespace mff::cli {

using config::RunConfig;

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

/// Exit code for a library error: data problems 3, numeric failure 4,
/// everything else (usage, configuration, shape contracts) 2.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return kNumeric;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const ValidationError*>(&e)) {
    return kData;
  }
  return kUsage;
}

// ---------------------------------------------------------------------------
// Data and models

struct Prepared {
  data::SeriesTable raw;
  data::SplitSpec split;
  data::SeriesTable table;  // standardized with train statistics
};

inline data::SeriesTable load_data(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("data file '" + path.string() + "' does not exist");
  return data::load_csv(path);
}

inline Prepared prepare(data::SeriesTable raw) {
  Prepared p;
  p.split = data::split(raw);
  p.table = data::standardize(raw, p.split);
  p.raw = std::move(raw);
  return p;
}

/// The table the encoder sees: the target column alone in univariate mode.
inline data::SeriesTable training_view(const data::SeriesTable& table, eval::Mode mode) {
  return mode == eval::Mode::univariate && table.features() != 1 ? table.target_only() : table;
}

/// Pins backbone.input_dim to the data width (0 means "take it from data").
inline RunConfig with_input_dim(RunConfig cfg, std::size_t D) {
  const std::size_t cur = cfg.count("backbone.input_dim");
  if (cur != 0 && cur != D) {
    throw DimensionError("backbone.input_dim is " + std::to_string(cur) + " but the data has " + std::to_string(D) +
                         " input features");
  }
  cfg.set("backbone.input_dim", std::to_string(D));
  return cfg;
}

struct Trained {
  RunConfig config;  // fully resolved, input_dim pinned
  Model model;
  FitResult fit;
};

inline Trained train_model(RunConfig cfg, const data::SeriesTable& table, const data::SplitSpec& split,
                           const StepObserver& observer = {}) {
  const data::SeriesTable input = training_view(table, cfg.mode());
  cfg = with_input_dim(std::move(cfg), input.features());
  Model model = Model::create(cfg.model_config(), cfg.seed("train.seed"));
  FitResult fr = fit(model, input, split.train(), cfg.train_config(), observer);
  return {std::move(cfg), std::move(model), std::move(fr)};
}

inline Checkpoint make_checkpoint(const RunConfig& cfg, const Model& model, const FitResult& fr) {
  return {cfg.to_text(), fr.epochs_completed, fr.rng_state, model.params};
}

struct Restored {
  RunConfig config;
  Model model;
};

inline Restored restore(const Checkpoint& ck) {
  RunConfig cfg = RunConfig::from_text(ck.config_text, "checkpoint config");
  Model model = Model::create(cfg.model_config(), 0);
  restore_parameters(model, ck.params);
  return {std::move(cfg), std::move(model)};
}

inline eval::ForecastReport evaluate(Model& model, const RunConfig& cfg, const Prepared& data,
                                     eval::AccessLog* log = nullptr) {
  const eval::EvalOptions opts = cfg.eval_options();
  const data::SeriesTable& t = data.table;
  const std::size_t D = cfg.mode() == eval::Mode::univariate && model.config.backbone.input_dim == 1 ? 1 : t.features();
  if (model.config.backbone.input_dim != D) {
    throw DimensionError("model expects " + std::to_string(model.config.backbone.input_dim) +
                         " input features, data '" + t.name + "' has " + std::to_string(D));
  }
  eval::ForecastReport rep = eval::evaluate_horizons(model, t, data.split, opts, log);
  rep.config = cfg.values();
  return rep;
}

// ---------------------------------------------------------------------------
// Files

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline std::string history_csv(const FitResult& fr) {
  std::string out = "epoch,total,time,freq\n";
  for (std::size_t e = 0; e < fr.history.size(); ++e) {
    const EpochLoss& l = fr.history[e];
    out += std::to_string(e) + "," + data::detail::format_double(l.total) + "," + data::detail::format_double(l.time) +
           "," + data::detail::format_double(l.freq) + "\n";
  }
  return out;
}

inline std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline eval::ForecastReport read_report(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("report '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return eval::report_from_json(j);
}

// ---------------------------------------------------------------------------
// Comparative reports (ablation, robustness)

struct ComparisonRow {
  std::string label;
  eval::ForecastReport report;
  double final_loss = std::numeric_limits<double>::quiet_NaN();  // last epoch mean L_total
};

struct ComparisonReport {
  std::string kind;
  std::vector<ComparisonRow> rows;
  std::map<std::string, std::string> config;
  std::string timestamp;
};

inline nlohmann::json to_json(const ComparisonReport& r) {
  nlohmann::json j;
  j["kind"] = r.kind;
  j["rows"] = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json jr;
    jr["label"] = row.label;
    jr["report"] = eval::to_json(row.report);
    jr["final_loss"] = std::isfinite(row.final_loss) ? nlohmann::json(row.final_loss) : nlohmann::json(nullptr);
    j["rows"].push_back(std::move(jr));
  }
  j["config"] = r.config;
  j["timestamp"] = r.timestamp;
  return j;
}

/// One row per label, one MSE/MAE column pair per horizon.
inline std::string format_comparison(const ComparisonReport& r) {
  std::vector<std::size_t> horizons;
  for (const auto& row : r.rows)
    for (const auto& e : row.report.entries)
      if (std::find(horizons.begin(), horizons.end(), e.horizon) == horizons.end()) horizons.push_back(e.horizon);
  std::ostringstream os;
  os << r.kind << " (standardized MSE / MAE)\n" << std::left << std::setw(14) << "variant";
  for (std::size_t h : horizons) os << std::right << std::setw(18) << ("P=" + std::to_string(h));
  os << "\n" << std::fixed << std::setprecision(4);
  for (const auto& row : r.rows) {
    os << std::left << std::setw(14) << row.label;
    for (std::size_t h : horizons) {
      auto it = std::find_if(row.report.entries.begin(), row.report.entries.end(),
                             [h](const eval::HorizonResult& e) { return e.horizon == h; });
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(4);
      if (it == row.report.entries.end()) {
        cell << "-";
      } else {
        cell << it->mse << " / " << it->mae;
      }
      os << std::right << std::setw(18) << cell.str();
    }
    os << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Ablation variants

/// The seven single and paired component removals.
inline const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> v{"w/o DA",    "w/o FM",    "w/o CM", "w/o DA+FM",
                                          "w/o DA+CM", "w/o CM+FM", "w/o Si"};
  return v;
}

/// "full" or "w/o X[+Y...]" with X, Y in {DA, FM, CM, Si}; case, spaces and
/// the slash are optional ("wo-fm" also works).
inline AblationFlags parse_variant(const std::string& name) {
  std::string s;
  for (char c : name)
    if (!std::isspace(static_cast<unsigned char>(c)) && c != '/' && c != '_' && c != '-')
      s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  AblationFlags f;
  if (s == "full") return f;
  if (s.rfind("wo", 0) != 0 || s.size() == 2) throw ConfigError("unknown ablation variant '" + name + "'");
  std::stringstream parts(s.substr(2));
  std::string part;
  while (std::getline(parts, part, '+')) {
    if (part == "da") {
      f.disable_augmentation = true;
    } else if (part == "fm") {
      f.disable_facm = true;
    } else if (part == "cm") {
      f.disable_ctcm = true;
    } else if (part == "si") {
      f.activation_gelu = true;
    } else {
      throw ConfigError("unknown ablation component '" + part + "' in variant '" + name +
                        "' (expected DA, FM, CM or Si)");
    }
  }
  return f;
}

using LabeledObserver = std::function<void(const std::string& label, const StepRecord&)>;

inline ComparisonReport run_ablation(const RunConfig& base, const Prepared& data,
                                     const std::vector<std::string>& variants, const LabeledObserver& observer = {}) {
  if (variants.empty()) throw ConfigError("ablation needs at least one variant");
  std::vector<AblationFlags> flags;
  for (const auto& v : variants) flags.push_back(parse_variant(v));
  ComparisonReport out;
  out.kind = "ablation";
  out.config = base.values();
  for (std::size_t i = 0; i < variants.size(); ++i) {
    RunConfig cfg = base;
    cfg.set_ablation(flags[i]);
    StepObserver obs;
    if (observer) obs = [&, label = variants[i]](const StepRecord& r) { observer(label, r); };
    Trained t = train_model(cfg, data.table, data.split, obs);
    ComparisonRow row{variants[i], evaluate(t.model, t.config, data), std::numeric_limits<double>::quiet_NaN()};
    if (!t.fit.history.empty()) row.final_loss = t.fit.history.back().total;
    out.rows.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Robustness

inline data::PerturbationKind parse_kind(const std::string& s) {
  if (s == "noise") return data::PerturbationKind::noise;
  if (s == "missing") return data::PerturbationKind::missing;
  throw ConfigError("perturbation kind must be noise or missing, got '" + s + "'");
}

/// The clean data with the train rows perturbed. Noise is added to the raw
/// values and standardized with the clean train statistics; missing cells
/// are zeroed after standardization.
inline Prepared perturb_train(const Prepared& clean, const data::PerturbationSpec& spec) {
  Prepared p = clean;
  if (spec.kind == data::PerturbationKind::noise) {
    p.raw = data::inject(clean.raw, spec, clean.split.train());
    p.table = data::standardize(p.raw, clean.split);
  } else {
    p.table = data::inject(clean.table, spec, clean.split.train());
  }
  return p;
}

inline std::string ratio_label(double r) {
  std::ostringstream os;
  os << "ratio=" << r;
  return os.str();
}

/// Baseline row, then one row per ratio. With `retrain` each ratio trains a
/// fresh model on the perturbed train split; otherwise the baseline model is
/// kept and only the probe sees perturbed training data.
inline ComparisonReport run_robustness(const RunConfig& cfg, const Prepared& clean, data::PerturbationKind kind,
                                       const std::vector<double>& ratios, bool retrain) {
  if (ratios.empty()) throw ConfigError("robustness needs at least one ratio");
  ComparisonReport out;
  out.kind = kind == data::PerturbationKind::noise ? "robustness-noise" : "robustness-missing";
  out.config = cfg.values();
  Trained base = train_model(cfg, clean.table, clean.split);
  auto final_loss = [](const FitResult& f) {
    return f.history.empty() ? std::numeric_limits<double>::quiet_NaN() : f.history.back().total;
  };
  out.rows.push_back({"baseline", evaluate(base.model, base.config, clean), final_loss(base.fit)});
  for (double r : ratios) {
    data::PerturbationSpec spec;
    spec.kind = kind;
    spec.ratio = r;
    spec.noise_mean = cfg.real("robustness.noise_mean");
    spec.noise_std = cfg.real("robustness.noise_std");
    spec.seed = cfg.seed("robustness.seed");
    const Prepared noisy = perturb_train(clean, spec);
    if (retrain) {
      Trained t = train_model(cfg, noisy.table, noisy.split);
      out.rows.push_back({ratio_label(r), evaluate(t.model, t.config, noisy), final_loss(t.fit)});
    } else {
      out.rows.push_back({ratio_label(r), evaluate(base.model, base.config, noisy), final_loss(base.fit)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Transfer

struct TransferResult {
  eval::ForecastReport report;
  FitResult pretrain;
  FitResult finetune;
  RunConfig config;
};

/// Pretrains on `source` for transfer.pretrain_epochs, fine-tunes on
/// `target` for transfer.finetune_epochs, evaluates on `target`.
inline TransferResult run_transfer(RunConfig cfg, const Prepared& source, const Prepared& target, bool reinit_input) {
  RunConfig pre = cfg;
  pre.set("train.epochs", cfg.get("transfer.pretrain_epochs"));
  Trained t = train_model(pre, source.table, source.split);

  const data::SeriesTable tgt = training_view(target.table, cfg.mode());
  TrainConfig ft = cfg.train_config();
  ft.epochs = cfg.count("transfer.finetune_epochs");
  FitResult fr = fine_tune(t.model, tgt, target.split.train(), ft, reinit_input);
  const std::string epochs = cfg.get("train.epochs");
  cfg = t.config;
  cfg.set("train.epochs", epochs);
  cfg.set("backbone.input_dim", std::to_string(t.model.config.backbone.input_dim));
  eval::ForecastReport rep = evaluate(t.model, cfg, target);
  return {std::move(rep), std::move(t.fit), std::move(fr), std::move(cfg)};
}

// ---------------------------------------------------------------------------
// Synthetic data

inline data::SeriesTable run_synth(const std::filesystem::path& spec_path) {
  if (!std::filesystem::exists(spec_path)) {
    throw ConfigError("synthetic spec '" + spec_path.string() + "' does not exist");
  }
  return data::gen_synthetic(config::parse_synth_spec(read_text(spec_path), spec_path.string()));
}

}  // namespace mff::cli
