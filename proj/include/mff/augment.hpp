#pragma once

// Adaptive scale/shift noise. Each view draws, per feature d, one scale
// eps_s ~ Normal(1, (alpha sigma_d)^2) and one shift eps_b ~ Normal(0,
// (beta sigma_d)^2) for the whole window, where sigma_d is the window's own
// population standard deviation. The view is eps_s * x[:, d] + eps_b.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mff/error.hpp"
#include "mff/tensor.hpp"

namespace mff::augment {

struct AugmentConfig {
  double alpha = 0.5;
  double beta = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ParameterError("augmentation strengths must be non-negative");
  }
};

struct SeriesStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // population (divide by T)
};

inline SeriesStats series_stats(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("series_stats expects a T x D window");
  const std::size_t T = x.dim(0), D = x.dim(1);
  SeriesStats s{std::vector<double>(D, 0.0), std::vector<double>(D, 0.0)};
  for (std::size_t d = 0; d < D; ++d) {
    double m = 0.0;
    for (std::size_t t = 0; t < T; ++t) m += x(t, d);
    m /= static_cast<double>(T);
    double v = 0.0;
    for (std::size_t t = 0; t < T; ++t) v += (x(t, d) - m) * (x(t, d) - m);
    s.mean[d] = m;
    s.stddev[d] = std::sqrt(v / static_cast<double>(T));
  }
  return s;
}

struct NoiseDraw {
  std::vector<double> scale;
  std::vector<double> shift;
};

/// The per-feature (eps_s, eps_b) pairs for one view. draw_index separates
/// the two views generated under one seed.
inline NoiseDraw draw_noise(const std::vector<double>& sigma, const AugmentConfig& cfg, std::uint64_t draw_index) {
  cfg.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(draw_index), 0x6d6666u};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> z(0.0, 1.0);
  NoiseDraw out{std::vector<double>(sigma.size()), std::vector<double>(sigma.size())};
  for (std::size_t d = 0; d < sigma.size(); ++d) {
    const double zs = z(rng);
    const double zb = z(rng);
    out.scale[d] = 1.0 + cfg.alpha * sigma[d] * zs;
    out.shift[d] = cfg.beta * sigma[d] * zb;
  }
  return out;
}

inline Tensor augment_view(const Tensor& x, const AugmentConfig& cfg, std::uint64_t draw_index) {
  const SeriesStats stats = series_stats(x);
  const NoiseDraw eps = draw_noise(stats.stddev, cfg, draw_index);
  Tensor out = x;
  const std::size_t T = x.dim(0), D = x.dim(1);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t d = 0; d < D; ++d) out(t, d) = eps.scale[d] * x(t, d) + eps.shift[d];
  return out;
}

}  // namespace mff::augment
