#pragma once

// Dataset ingestion and preparation: ETT-style CSV loading, chronological
// train/valid/test splitting with train-only normalization statistics,
// window enumeration, a seeded synthetic generator, and the noise / missing
// value injectors used by robustness runs.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mff/error.hpp"
#include "mff/tensor.hpp"

namespace mff::data {

struct SeriesTable {
  std::string name;                      // dataset id, the file stem for loaded CSVs
  std::vector<std::string> timestamps;   // N entries, strictly increasing
  std::vector<std::string> feature_names;
  Tensor values;                         // N x D
  std::size_t target_index = 0;
  std::vector<std::uint8_t> missing;     // N*D flags; empty when nothing is missing
  bool standardized = false;

  std::size_t rows() const { return values.size() ? values.dim(0) : 0; }
  std::size_t features() const { return values.size() ? values.dim(1) : 0; }

  /// Copy holding only the target column.
  SeriesTable target_only() const {
    SeriesTable out;
    out.name = name;
    out.timestamps = timestamps;
    out.feature_names = {feature_names.at(target_index)};
    out.values = Tensor({rows(), 1});
    for (std::size_t i = 0; i < rows(); ++i) out.values(i, 0) = values(i, target_index);
    if (!missing.empty()) {
      out.missing.resize(rows());
      for (std::size_t i = 0; i < rows(); ++i) out.missing[i] = missing[i * features() + target_index];
    }
    out.standardized = standardized;
    return out;
  }
};

struct RowRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t length() const { return end - begin; }
};

/// Split boundaries plus per-feature statistics of the train rows.
struct SplitSpec {
  std::size_t train_end = 0;
  std::size_t valid_end = 0;
  std::size_t test_end = 0;
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<bool> constant;  // zero-variance features, normalized by 1

  RowRange train() const { return {0, train_end}; }
  RowRange valid() const { return {train_end, valid_end}; }
  RowRange test() const { return {valid_end, test_end}; }
};

struct SplitCounts {
  std::size_t train = 0;
  std::size_t valid = 0;
  std::size_t test = 0;
};

// ---------------------------------------------------------------------------
// Timestamps

/// Seconds since the epoch for "YYYY-MM-DD[( |T)HH:MM[:SS]]".
inline std::optional<std::int64_t> parse_timestamp(std::string_view s) {
  auto num = [&](std::size_t pos, std::size_t len, int& out) {
    if (pos + len > s.size()) return false;
    auto r = std::from_chars(s.data() + pos, s.data() + pos + len, out);
    return r.ec == std::errc() && r.ptr == s.data() + pos + len;
  };
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  if (s.size() < 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  if (!num(0, 4, y) || !num(5, 2, mo) || !num(8, 2, d)) return std::nullopt;
  if (s.size() > 10) {
    if ((s[10] != ' ' && s[10] != 'T') || s.size() < 16 || s[13] != ':') return std::nullopt;
    if (!num(11, 2, h) || !num(14, 2, mi)) return std::nullopt;
    if (s.size() > 16) {
      if (s.size() != 19 || s[16] != ':' || !num(17, 2, sec)) return std::nullopt;
    }
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 60) return std::nullopt;
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<std::int64_t>(days) * 86400 + h * 3600 + mi * 60 + sec;
}

inline std::string format_timestamp(std::int64_t epoch_seconds) {
  using namespace std::chrono;
  const auto day_count = static_cast<int>(std::floor(static_cast<double>(epoch_seconds) / 86400.0));
  const year_month_day ymd{sys_days{days{day_count}}};
  const std::int64_t rem = epoch_seconds - static_cast<std::int64_t>(day_count) * 86400;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u %02d:%02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(rem / 3600), static_cast<int>((rem / 60) % 60), static_cast<int>(rem % 60));
  return buf;
}

/// Median spacing between consecutive timestamps, in seconds.
inline std::int64_t sampling_interval(const SeriesTable& table) {
  std::vector<std::int64_t> gaps;
  for (std::size_t i = 1; i < table.timestamps.size(); ++i) {
    auto a = parse_timestamp(table.timestamps[i - 1]);
    auto b = parse_timestamp(table.timestamps[i]);
    if (a && b) gaps.push_back(*b - *a);
  }
  if (gaps.empty()) return 0;
  std::nth_element(gaps.begin(), gaps.begin() + gaps.size() / 2, gaps.end());
  return gaps[gaps.size() / 2];
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"'))
    s.remove_suffix(1);
  return s;
}

inline std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

/// Parses CSV text with a `date` column followed by numeric feature columns.
/// The target column defaults to the last one.
inline SeriesTable parse_csv(std::istream& in, std::string name) {
  SeriesTable table;
  table.name = std::move(name);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(table.name + ": empty file");
  auto header = detail::split_commas(line);
  if (header.size() < 2) throw ParseError(table.name + ": header needs a date column and at least one feature");
  for (std::size_t i = 1; i < header.size(); ++i) table.feature_names.emplace_back(detail::trim(header[i]));
  const std::size_t D = table.feature_names.size();

  std::vector<double> values;
  std::optional<std::int64_t> prev;
  std::size_t row = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_commas(line);
    if (cells.size() != D + 1) {
      throw ParseError(table.name + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                       " cells, expected " + std::to_string(D + 1));
    }
    const std::string_view stamp = detail::trim(cells[0]);
    const auto secs = parse_timestamp(stamp);
    if (!secs) {
      throw ParseError(table.name + ": line " + std::to_string(line_no) + " column 1: bad timestamp '" +
                       std::string(stamp) + "'");
    }
    if (prev && *secs <= *prev) {
      throw ValidationError(table.name + ": timestamps not strictly increasing at line " + std::to_string(line_no));
    }
    prev = secs;
    table.timestamps.emplace_back(stamp);
    for (std::size_t c = 1; c <= D; ++c) {
      const std::string_view cell = detail::trim(cells[c]);
      double v = 0.0;
      auto r = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (r.ec != std::errc() || r.ptr != cell.data() + cell.size() || cell.empty() || !std::isfinite(v)) {
        throw ParseError(table.name + ": line " + std::to_string(line_no) + " column " + std::to_string(c + 1) +
                         " (" + table.feature_names[c - 1] + "): non-numeric value '" + std::string(cell) + "'");
      }
      values.push_back(v);
    }
    ++row;
  }
  if (row == 0) throw ParseError(table.name + ": no data rows");
  table.values = Tensor({row, D}, std::move(values));
  table.target_index = D - 1;
  return table;
}

inline SeriesTable load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open data file '" + path.string() + "'");
  return parse_csv(in, path.stem().string());
}

inline void write_csv(const SeriesTable& table, std::ostream& out) {
  out << "date";
  for (const auto& f : table.feature_names) out << ',' << f;
  out << '\n';
  for (std::size_t i = 0; i < table.rows(); ++i) {
    out << table.timestamps[i];
    for (std::size_t d = 0; d < table.features(); ++d) out << ',' << detail::format_double(table.values(i, d));
    out << '\n';
  }
}

inline void write_csv(const SeriesTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  write_csv(table, out);
}

// ---------------------------------------------------------------------------
// Splits and normalization

/// Standard split sizes for the benchmark datasets.
inline std::optional<SplitCounts> known_split(const std::string& dataset) {
  if (dataset == "ETTh1" || dataset == "ETTh2") return SplitCounts{8640, 2880, 2880};
  if (dataset == "ETTm1" || dataset == "ETTm2") return SplitCounts{34560, 11520, 11520};
  if (dataset == "WTH") return SplitCounts{21038, 7013, 7013};
  return std::nullopt;
}

inline SplitCounts ratio_counts(std::size_t n, double train = 0.6, double valid = 0.2) {
  SplitCounts c;
  c.train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train + 1e-9));
  c.valid = static_cast<std::size_t>(std::floor(static_cast<double>(n) * valid + 1e-9));
  c.test = n - c.train - c.valid;
  return c;
}

/// Boundaries from explicit counts; statistics from the train rows only.
inline SplitSpec split(const SeriesTable& table, const SplitCounts& counts) {
  const std::size_t N = table.rows();
  if (counts.train + counts.valid + counts.test > N) {
    throw ParameterError("split counts " + std::to_string(counts.train) + "/" + std::to_string(counts.valid) + "/" +
                         std::to_string(counts.test) + " exceed " + std::to_string(N) + " rows");
  }
  if (counts.train == 0 || counts.valid == 0) throw ParameterError("train and validation splits must be non-empty");
  SplitSpec spec;
  spec.train_end = counts.train;
  spec.valid_end = counts.train + counts.valid;
  spec.test_end = spec.valid_end + counts.test;
  const std::size_t D = table.features();
  spec.mean.assign(D, 0.0);
  spec.stddev.assign(D, 1.0);
  spec.constant.assign(D, false);
  for (std::size_t d = 0; d < D; ++d) {
    double m = 0.0;
    for (std::size_t i = 0; i < spec.train_end; ++i) m += table.values(i, d);
    m /= static_cast<double>(spec.train_end);
    double var = 0.0;
    for (std::size_t i = 0; i < spec.train_end; ++i) {
      const double e = table.values(i, d) - m;
      var += e * e;
    }
    const double sd = std::sqrt(var / static_cast<double>(spec.train_end));
    spec.mean[d] = m;
    if (sd > 1e-12 * std::max(1.0, std::abs(m))) {
      spec.stddev[d] = sd;
    } else {
      spec.constant[d] = true;
    }
  }
  return spec;
}

/// Recognized datasets use their standard counts, everything else 6:2:2.
inline SplitSpec split(const SeriesTable& table) {
  if (auto known = known_split(table.name)) return split(table, *known);
  return split(table, ratio_counts(table.rows()));
}

inline SeriesTable standardize(const SeriesTable& table, const SplitSpec& spec) {
  if (spec.mean.size() != table.features()) throw DimensionError("standardize: split statistics width mismatch");
  SeriesTable out = table;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t d = 0; d < out.features(); ++d)
      out.values(i, d) = (table.values(i, d) - spec.mean[d]) / spec.stddev[d];
  out.standardized = true;
  return out;
}

// ---------------------------------------------------------------------------
// Windows

struct WindowBatch {
  Tensor windows;  // B x T x D
  std::vector<std::size_t> origin_indices;
};

/// Start rows of every length-T window inside `range`, in order.
inline std::vector<std::size_t> window_starts(const RowRange& range, std::size_t T, std::size_t stride) {
  if (T == 0 || stride == 0) throw ParameterError("window length and stride must be positive");
  if (T > range.length()) {
    throw ParameterError("window length " + std::to_string(T) + " exceeds split length " +
                         std::to_string(range.length()));
  }
  std::vector<std::size_t> starts;
  for (std::size_t s = range.begin; s + T <= range.end; s += stride) starts.push_back(s);
  return starts;
}

/// One T x D window starting at `start`.
inline Tensor window_at(const SeriesTable& table, std::size_t start, std::size_t T) {
  const std::size_t D = table.features();
  if (start + T > table.rows()) throw ParameterError("window runs past the end of the table");
  Tensor w({T, D});
  std::copy_n(table.values.raw() + start * D, T * D, w.raw());
  return w;
}

inline WindowBatch make_batch(const SeriesTable& table, const std::vector<std::size_t>& starts, std::size_t T) {
  const std::size_t D = table.features();
  WindowBatch batch{Tensor({starts.size(), T, D}), starts};
  for (std::size_t b = 0; b < starts.size(); ++b)
    std::copy_n(table.values.raw() + starts[b] * D, T * D, batch.windows.raw() + b * T * D);
  return batch;
}

/// Iterates a split in fixed-size batches of consecutive windows.
class WindowIterator {
 public:
  WindowIterator(const SeriesTable& table, RowRange range, std::size_t T, std::size_t stride, std::size_t batch)
      : table_(table), T_(T), batch_(batch), starts_(window_starts(range, T, stride)) {
    if (batch == 0) throw ParameterError("batch size must be positive");
  }

  std::size_t window_count() const { return starts_.size(); }

  std::optional<WindowBatch> next() {
    if (pos_ >= starts_.size()) return std::nullopt;
    const std::size_t end = std::min(starts_.size(), pos_ + batch_);
    std::vector<std::size_t> chunk(starts_.begin() + static_cast<long>(pos_), starts_.begin() + static_cast<long>(end));
    pos_ = end;
    return make_batch(table_, chunk, T_);
  }

 private:
  const SeriesTable& table_;
  std::size_t T_;
  std::size_t batch_;
  std::vector<std::size_t> starts_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Synthetic series

struct SinusoidComponent {
  double period = 1.0;
  double amplitude = 0.0;
  double phase = 0.0;
};

struct SynthFeature {
  std::string name;
  std::vector<SinusoidComponent> components;
  double slope = 0.0;
};

struct SynthSpec {
  std::size_t length = 0;
  std::vector<SynthFeature> features;
  double noise_std = 0.0;
  std::uint64_t seed = 0;
  std::string start = "2016-07-01 00:00:00";
  std::int64_t step_seconds = 3600;
  std::string name = "synthetic";
};

/// x_d[t] = sum_c amp_c sin(2 pi t / period_c + phase_c) + slope_d t + noise.
inline SeriesTable gen_synthetic(const SynthSpec& spec) {
  if (spec.length == 0) throw ParameterError("synthetic series length must be positive");
  if (spec.features.empty()) throw ParameterError("synthetic series needs at least one feature");
  for (const auto& f : spec.features)
    for (const auto& c : f.components)
      if (!(c.period > 0.0)) throw ParameterError("sinusoid period must be positive");
  const auto t0 = parse_timestamp(spec.start);
  if (!t0) throw ParameterError("bad synthetic start timestamp '" + spec.start + "'");

  SeriesTable table;
  table.name = spec.name;
  const std::size_t D = spec.features.size();
  table.values = Tensor({spec.length, D});
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t t = 0; t < spec.length; ++t) {
    table.timestamps.push_back(format_timestamp(*t0 + static_cast<std::int64_t>(t) * spec.step_seconds));
    for (std::size_t d = 0; d < D; ++d) {
      const auto& f = spec.features[d];
      double v = f.slope * static_cast<double>(t);
      for (const auto& c : f.components)
        v += c.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / c.period + c.phase);
      if (spec.noise_std > 0.0) v += spec.noise_std * noise(rng);
      table.values(t, d) = v;
    }
  }
  for (std::size_t d = 0; d < D; ++d) {
    table.feature_names.push_back(spec.features[d].name.empty() ? "x" + std::to_string(d) : spec.features[d].name);
  }
  table.target_index = D - 1;
  return table;
}

// ---------------------------------------------------------------------------
// Perturbations

enum class PerturbationKind { noise, missing };

struct PerturbationSpec {
  PerturbationKind kind = PerturbationKind::noise;
  double ratio = 0.0;
  double noise_mean = 10.0;
  double noise_std = 10.0;
  std::uint64_t seed = 0;
};

/// ceil(ratio * cells), robust to products like 0.3 * 100 landing a hair
/// above an integer.
inline std::size_t perturbed_cell_count(double ratio, std::size_t cells) {
  const double v = ratio * static_cast<double>(cells);
  const double r = std::round(v);
  if (std::abs(v - r) <= 1e-9 * std::max(1.0, v)) return static_cast<std::size_t>(r);
  return static_cast<std::size_t>(std::ceil(v));
}

/// Perturbs ceil(ratio * rows * D) cells of `rows`, chosen uniformly without
/// replacement. Noise adds Normal(mean, std^2) draws; missing zeroes the
/// cells (the train mean on standardized data) and flags them in the mask.
inline SeriesTable inject(const SeriesTable& table, const PerturbationSpec& spec, std::optional<RowRange> rows = {}) {
  if (!(spec.ratio >= 0.0 && spec.ratio <= 1.0)) {
    throw ParameterError("perturbation ratio must lie in [0, 1], got " + std::to_string(spec.ratio));
  }
  if (spec.kind == PerturbationKind::missing && !table.standardized) {
    throw ContractError("missing-value injection expects a standardized table");
  }
  const RowRange range = rows.value_or(RowRange{0, table.rows()});
  if (range.end > table.rows() || range.begin > range.end) throw ParameterError("perturbation row range out of bounds");
  const std::size_t D = table.features();
  const std::size_t cells = range.length() * D;
  const std::size_t count = perturbed_cell_count(spec.ratio, cells);
  SeriesTable out = table;
  if (count == 0) return out;

  std::mt19937_64 rng(spec.seed);
  std::vector<std::size_t> all(cells);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<std::size_t> chosen;
  chosen.reserve(count);
  std::sample(all.begin(), all.end(), std::back_inserter(chosen), count, rng);

  if (spec.kind == PerturbationKind::noise) {
    std::normal_distribution<double> dist(spec.noise_mean, spec.noise_std);
    for (std::size_t cell : chosen) out.values[range.begin * D + cell] += dist(rng);
  } else {
    if (out.missing.empty()) out.missing.assign(table.rows() * D, 0);
    for (std::size_t cell : chosen) {
      out.values[range.begin * D + cell] = 0.0;
      out.missing[range.begin * D + cell] = 1;
    }
  }
  return out;
}

}  // namespace mff::data
