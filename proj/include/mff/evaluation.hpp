#pragma once

// Linear probe on frozen representations: r at the final timestep of each
// window, ridge regression onto the next P standardized values, alpha picked
// on the validation split, MSE/MAE on the test split.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mff/dataio.hpp"
#include "mff/model.hpp"

namespace mff::eval {

using Matrix = Eigen::MatrixXd;

enum class Mode { multivariate, univariate };

inline std::string to_string(Mode m) { return m == Mode::multivariate ? "multivariate" : "univariate"; }

inline Mode parse_mode(const std::string& s) {
  if (s == "multivariate") return Mode::multivariate;
  if (s == "univariate") return Mode::univariate;
  throw ConfigError("unknown mode '" + s + "' (expected multivariate or univariate)");
}

inline const std::vector<std::size_t>& hourly_horizons() {
  static const std::vector<std::size_t> h{24, 48, 168, 336, 720};
  return h;
}

inline const std::vector<std::size_t>& quarter_hour_horizons() {
  static const std::vector<std::size_t> h{24, 48, 96, 288, 672};
  return h;
}

/// Horizon grid for a dataset: 15-minute data (ETTm*, or sampled every 15
/// minutes or faster) gets the quarter-hour grid, everything else hourly.
inline std::vector<std::size_t> horizon_grid(const data::SeriesTable& table) {
  if (table.name.rfind("ETTm", 0) == 0) return quarter_hour_horizons();
  if (table.name.rfind("ETTh", 0) == 0 || table.name == "WTH") return hourly_horizons();
  if (table.rows() >= 2 && data::sampling_interval(table) <= 15 * 60) return quarter_hour_horizons();
  return hourly_horizons();
}

/// Counts which split's targets were read, and by which stage.
struct AccessLog {
  std::vector<std::string> events;  // "<stage>:<split>"
  void record(const std::string& stage, const std::string& split) { events.push_back(stage + ":" + split); }
};

/// Final-timestep representations for every window [s, s+T) with
/// begin <= s and s + T <= end. Row i belongs to start begin + i.
inline Matrix encode_positions(Model& model, const data::SeriesTable& input, const data::RowRange& range) {
  const std::size_t T = model.config.window, K = model.config.backbone.output_dim;
  if (range.length() < T) {
    throw ConfigError("insufficient rows: split of " + std::to_string(range.length()) + " rows is shorter than window " +
                      std::to_string(T));
  }
  const std::size_t M = range.length() - T + 1;
  Matrix out(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(K));
  for (std::size_t i = 0; i < M; ++i) {
    const Tensor r = model.represent(data::window_at(input, range.begin + i, T));
    for (std::size_t k = 0; k < K; ++k) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = r(T - 1, k);
  }
  return out;
}

/// The P rows following each window, flattened row-major over the chosen
/// columns. Row i belongs to the window starting at begin + i.
inline Matrix future_targets(const data::SeriesTable& table, const data::RowRange& range, std::size_t T,
                             std::size_t P, const std::vector<std::size_t>& columns) {
  if (range.length() < T + P) {
    throw ConfigError("insufficient rows: split of " + std::to_string(range.length()) + " rows cannot hold window " +
                      std::to_string(T) + " plus horizon " + std::to_string(P));
  }
  const std::size_t M = range.length() - T - P + 1, C = columns.size();
  Matrix Y(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(P * C));
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t c = 0; c < C; ++c)
        Y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p * C + c)) =
            table.values(range.begin + i + T + p, columns[c]);
  return Y;
}

struct Features {
  Matrix X;  // M x K
  Matrix Y;  // M x (P * D_out)
};

inline std::vector<std::size_t> output_columns(const data::SeriesTable& table, Mode mode) {
  if (mode == Mode::univariate) return {table.target_index};
  std::vector<std::size_t> cols(table.features());
  for (std::size_t d = 0; d < cols.size(); ++d) cols[d] = d;
  return cols;
}

/// The model's input view of `table`: the target column alone for a
/// one-feature model in univariate mode, the full table otherwise.
inline data::SeriesTable model_input(const Model& model, const data::SeriesTable& table, Mode mode) {
  if (mode == Mode::univariate && model.config.backbone.input_dim == 1 && table.features() != 1) {
    return table.target_only();
  }
  return table;
}

inline Features extract_features(Model& model, const data::SeriesTable& table, const data::RowRange& range,
                                 std::size_t P, Mode mode) {
  const std::size_t T = model.config.window;
  Matrix Y = future_targets(table, range, T, P, output_columns(table, mode));
  Matrix R = encode_positions(model, model_input(model, table, mode), range);
  return {R.topRows(Y.rows()), std::move(Y)};
}

struct RidgeProbe {
  Matrix weights;           // K x out
  Eigen::RowVectorXd intercept;
  double alpha = 0.0;
  double valid_mse = std::numeric_limits<double>::quiet_NaN();

  Matrix predict(const Matrix& X) const {
    Matrix out = X * weights;
    out.rowwise() += intercept;
    return out;
  }
};

/// Closed-form ridge on centered data: (Xc'Xc + alpha I) W = Xc'Yc,
/// intercept = mean(Y) - mean(X) W.
inline RidgeProbe solve_ridge(const Matrix& X, const Matrix& Y, double alpha) {
  if (X.rows() < 2) throw ConfigError("ridge probe needs at least 2 training rows, got " + std::to_string(X.rows()));
  if (X.rows() != Y.rows()) throw DimensionError("ridge: feature and target row counts differ");
  if (!(alpha > 0.0)) throw ParameterError("ridge alpha must be positive");
  const Eigen::RowVectorXd xm = X.colwise().mean();
  const Eigen::RowVectorXd ym = Y.colwise().mean();
  const Matrix Xc = X.rowwise() - xm;
  const Matrix Yc = Y.rowwise() - ym;
  Matrix A = Xc.transpose() * Xc;
  A.diagonal().array() += alpha;
  RidgeProbe probe;
  probe.weights = A.ldlt().solve(Xc.transpose() * Yc);
  probe.intercept = ym - xm * probe.weights;
  probe.alpha = alpha;
  return probe;
}

struct Scores {
  double mse = 0.0;
  double mae = 0.0;
};

inline Scores score_predictions(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw DimensionError("score: prediction and target shapes differ");
  }
  const Matrix diff = pred - target;
  const double n = static_cast<double>(diff.size());
  return {diff.array().square().sum() / n, diff.array().abs().sum() / n};
}

inline Scores score(const RidgeProbe& probe, const Matrix& X, const Matrix& Y) {
  return score_predictions(probe.predict(X), Y);
}

inline const std::vector<double>& default_alphas() {
  static const std::vector<double> a{0.01, 0.1, 1.0, 10.0, 100.0};
  return a;
}

/// Fits one probe per alpha on train and keeps the lowest validation MSE
/// (first in grid order on ties).
inline RidgeProbe fit_ridge(const Matrix& X_train, const Matrix& Y_train, const Matrix& X_valid,
                            const Matrix& Y_valid, const std::vector<double>& alphas = default_alphas()) {
  if (alphas.empty()) throw ParameterError("ridge alpha grid is empty");
  std::optional<RidgeProbe> best;
  for (double a : alphas) {
    RidgeProbe p = solve_ridge(X_train, Y_train, a);
    p.valid_mse = score(p, X_valid, Y_valid).mse;
    if (!best || p.valid_mse < best->valid_mse) best = std::move(p);
  }
  return *best;
}

/// Predicts the per-column train mean everywhere.
inline Scores mean_predictor_score(const Matrix& Y_train, const Matrix& Y_test) {
  const Eigen::RowVectorXd m = Y_train.colwise().mean();
  Matrix pred = Matrix::Zero(Y_test.rows(), Y_test.cols());
  pred.rowwise() += m;
  return score_predictions(pred, Y_test);
}

// ---------------------------------------------------------------------------
// Reports

struct HorizonResult {
  std::size_t horizon = 0;
  double mse = 0.0;
  double mae = 0.0;
  double alpha = 0.0;
  std::size_t train_samples = 0;
  std::size_t valid_samples = 0;
  std::size_t test_samples = 0;
};

struct SkippedHorizon {
  std::size_t horizon = 0;
  std::string reason;
};

struct ForecastReport {
  std::string dataset;
  Mode mode = Mode::multivariate;
  std::size_t window = 0;
  std::vector<HorizonResult> entries;
  std::vector<SkippedHorizon> skipped;
  double avg_mse = 0.0;
  double avg_mae = 0.0;
  std::map<std::string, std::string> config;
  std::string timestamp;  // empty unless the caller stamps the run

  void recompute_averages() {
    avg_mse = avg_mae = 0.0;
    if (entries.empty()) return;
    for (const auto& e : entries) {
      avg_mse += e.mse;
      avg_mae += e.mae;
    }
    avg_mse /= static_cast<double>(entries.size());
    avg_mae /= static_cast<double>(entries.size());
  }
};

struct EvalOptions {
  std::vector<std::size_t> horizons;  // empty: the dataset's grid
  std::vector<double> alphas = default_alphas();
  Mode mode = Mode::multivariate;
};

/// `table` must already be standardized with `split`'s train statistics.
inline ForecastReport evaluate_horizons(Model& model, const data::SeriesTable& table, const data::SplitSpec& split,
                                        const EvalOptions& opts, AccessLog* log = nullptr) {
  if (!table.standardized) throw ContractError("evaluate_horizons expects a standardized table");
  const std::size_t T = model.config.window;
  ForecastReport report;
  report.dataset = table.name;
  report.mode = opts.mode;
  report.window = T;
  const std::vector<std::size_t> horizons = opts.horizons.empty() ? horizon_grid(table) : opts.horizons;
  const std::vector<std::size_t> cols = output_columns(table, opts.mode);
  const data::SeriesTable input = model_input(model, table, opts.mode);

  const data::RowRange ranges[3] = {split.train(), split.valid(), split.test()};
  std::optional<Matrix> reps[3];
  for (std::size_t P : horizons) {
    std::string reason;
    for (const auto& r : ranges) {
      if (r.length() < T + P) {
        reason = "horizon " + std::to_string(P) + " with window " + std::to_string(T) + " needs " +
                 std::to_string(T + P) + " rows per split, smallest split has " + std::to_string(r.length());
        break;
      }
    }
    if (P == 0) reason = "horizon must be positive";
    if (!reason.empty()) {
      report.skipped.push_back({P, reason});
      continue;
    }
    for (int s = 0; s < 3; ++s)
      if (!reps[s]) reps[s] = encode_positions(model, input, ranges[s]);
    auto rows = [&](int s) { return reps[s]->topRows(static_cast<Eigen::Index>(ranges[s].length() - T - P + 1)); };

    if (log) log->record("fit", "train");
    const Matrix Y_train = future_targets(table, ranges[0], T, P, cols);
    if (log) log->record("select", "valid");
    const Matrix Y_valid = future_targets(table, ranges[1], T, P, cols);
    const RidgeProbe probe = fit_ridge(rows(0), Y_train, rows(1), Y_valid, opts.alphas);
    if (log) log->record("score", "test");
    const Matrix Y_test = future_targets(table, ranges[2], T, P, cols);
    const Scores sc = score(probe, rows(2), Y_test);
    report.entries.push_back({P, sc.mse, sc.mae, probe.alpha, static_cast<std::size_t>(Y_train.rows()),
                              static_cast<std::size_t>(Y_valid.rows()), static_cast<std::size_t>(Y_test.rows())});
  }
  report.recompute_averages();
  return report;
}

inline nlohmann::json to_json(const ForecastReport& r) {
  nlohmann::json j;
  j["dataset"] = r.dataset;
  j["mode"] = to_string(r.mode);
  j["window"] = r.window;
  j["metric_space"] = "standardized";
  j["entries"] = nlohmann::json::array();
  for (const auto& e : r.entries) {
    j["entries"].push_back({{"horizon", e.horizon},
                            {"mse", e.mse},
                            {"mae", e.mae},
                            {"alpha", e.alpha},
                            {"samples", {{"train", e.train_samples}, {"valid", e.valid_samples}, {"test", e.test_samples}}}});
  }
  j["skipped"] = nlohmann::json::array();
  for (const auto& s : r.skipped) j["skipped"].push_back({{"horizon", s.horizon}, {"reason", s.reason}});
  j["average"] = {{"mse", r.avg_mse}, {"mae", r.avg_mae}};
  j["config"] = r.config;
  j["timestamp"] = r.timestamp;
  return j;
}

inline ForecastReport report_from_json(const nlohmann::json& j) {
  try {
    ForecastReport r;
    r.dataset = j.at("dataset").get<std::string>();
    r.mode = parse_mode(j.at("mode").get<std::string>());
    r.window = j.at("window").get<std::size_t>();
    for (const auto& e : j.at("entries")) {
      const auto& s = e.at("samples");
      r.entries.push_back({e.at("horizon").get<std::size_t>(), e.at("mse").get<double>(), e.at("mae").get<double>(),
                           e.at("alpha").get<double>(), s.at("train").get<std::size_t>(),
                           s.at("valid").get<std::size_t>(), s.at("test").get<std::size_t>()});
    }
    for (const auto& s : j.at("skipped")) {
      r.skipped.push_back({s.at("horizon").get<std::size_t>(), s.at("reason").get<std::string>()});
    }
    r.avg_mse = j.at("average").at("mse").get<double>();
    r.avg_mae = j.at("average").at("mae").get<double>();
    r.config = j.at("config").get<std::map<std::string, std::string>>();
    r.timestamp = j.at("timestamp").get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed forecast report: ") + e.what());
  }
}

/// Aligned console table: one row per horizon, then the average.
inline std::string format_table(const ForecastReport& r) {
  std::ostringstream os;
  os << r.dataset << " (" << to_string(r.mode) << ", standardized, window " << r.window << ")\n";
  os << std::left << std::setw(10) << "horizon" << std::right << std::setw(10) << "MSE" << std::setw(10) << "MAE"
     << std::setw(10) << "alpha" << "\n";
  os << std::fixed;
  for (const auto& e : r.entries) {
    os << std::left << std::setw(10) << e.horizon << std::right << std::setprecision(4) << std::setw(10) << e.mse
       << std::setw(10) << e.mae << std::setprecision(2) << std::setw(10) << e.alpha << "\n";
  }
  if (!r.entries.empty()) {
    os << std::left << std::setw(10) << "avg" << std::right << std::setprecision(4) << std::setw(10) << r.avg_mse
       << std::setw(10) << r.avg_mae << "\n";
  }
  for (const auto& s : r.skipped) os << "skipped horizon " << s.horizon << ": " << s.reason << "\n";
  return os.str();
}

}  // namespace mff::eval
