#pragma once

// Central finite-difference oracle for tape gradients.
//
// Error metric, per coordinate i:
//   |analytic_i - (f(x + h e_i) - f(x - h e_i)) / 2h| / (|analytic_i| + 1e-8)
// and the checks return the maximum over all coordinates.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "mff/autodiff.hpp"

namespace mff {

using ScalarFn = std::function<Var(Tape&, const Var&)>;
using LossFn = std::function<Var(Tape&)>;

/// Gradients whose analytic and numeric values both stay below this are
/// taken as zero; the relative formula would otherwise divide round-off by
/// 1e-8.
inline constexpr double kZeroGradient = 1e-8;

/// Round-off floor of a central difference of values near |f| with step h.
inline double fd_noise_floor(double f_magnitude, double step) {
  return 16.0 * std::numeric_limits<double>::epsilon() * f_magnitude / step;
}

/// |a - n| / (|a| + 1e-8), or 0 when both sides are below `zero`.
inline double fd_relative_error(double analytic, double numeric, double zero = kZeroGradient) {
  zero = std::max(zero, kZeroGradient);
  if (std::abs(analytic) < zero && std::abs(numeric) < zero) return 0.0;
  return std::abs(analytic - numeric) / (std::abs(analytic) + 1e-8);
}

/// Checks d f / d x for a free input tensor.
inline double finite_diff_check(const ScalarFn& f, const Tensor& x, double step = 1e-5) {
  Tape tape;
  Var xv = tape.variable(x);
  Var out = f(tape, xv);
  tape.backward(out);
  const Tensor analytic = xv.grad();

  auto eval = [&](const Tensor& probe) {
    Tape t(false);
    return f(t, t.constant(probe)).value()[0];
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double up = eval(probe);
    probe[i] = x[i] - step;
    const double down = eval(probe);
    probe[i] = x[i];
    const double floor = fd_noise_floor(std::max(std::abs(up), std::abs(down)), step);
    worst = std::max(worst, fd_relative_error(analytic[i], (up - down) / (2.0 * step), floor));
  }
  return worst;
}

/// Checks d loss / d p for every scalar of every parameter in `params`.
/// The loss function must be deterministic (dropout off, fixed seeds).
inline double finite_diff_check(const LossFn& loss, ParameterSet& params, double step = 1e-5) {
  params.zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  auto eval = [&]() {
    Tape t(false);
    return loss(t).value()[0];
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = params[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + step;
      const double up = eval();
      p.value[i] = orig - step;
      const double down = eval();
      p.value[i] = orig;
      const double floor = fd_noise_floor(std::max(std::abs(up), std::abs(down)), step);
      worst = std::max(worst, fd_relative_error(p.grad[i], (up - down) / (2.0 * step), floor));
    }
  }
  return worst;
}

}  // namespace mff
