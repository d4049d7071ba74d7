#pragma once

// Hand-rolled generators for the property tests. Every case is derived from
// a seed so a failure message can name the case that broke.

#include <cstdint>
#include <random>
#include <vector>

#include "mff/dataio.hpp"
#include "mff/tensor.hpp"

namespace mff::testing {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  std::size_t size(std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_); }
  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  bool coin() { return size(0, 1) == 1; }

  Tensor tensor(Shape shape, double scale = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> z(0.0, scale);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = z(rng_);
    return t;
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

/// An hourly N x D table with random values, named `name`.
inline data::SeriesTable random_table(Gen& g, std::size_t N, std::size_t D, const std::string& name = "random") {
  data::SeriesTable t;
  t.name = name;
  t.values = g.tensor({N, D});
  for (std::size_t i = 0; i < N; ++i) t.timestamps.push_back(data::format_timestamp(1467331200 + 3600 * static_cast<std::int64_t>(i)));
  for (std::size_t d = 0; d < D; ++d) t.feature_names.push_back(d + 1 == D ? "OT" : "x" + std::to_string(d));
  t.target_index = D - 1;
  return t;
}

}  // namespace mff::testing
