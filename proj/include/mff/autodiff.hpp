#pragma once

// Reverse-mode automatic differentiation over dense Tensors.
//
// A Tape records every operation executed on it. Each recorded node owns its
// forward value, a lazily-allocated gradient buffer and a backward closure
// that pushes the node's gradient into its inputs. Nodes are appended in
// execution order, so walking the tape backwards is a valid reverse
// topological order.
//
// Parameters live outside the tape. Tape::param() binds a Parameter as a
// leaf; backward() adds the leaf gradient into Parameter::grad (accumulation,
// never overwrite), which lets one parameter feed several views in a step.

#include <Eigen/Dense>

#include <cassert>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mff/error.hpp"
#include "mff/spectral.hpp"
#include "mff/tensor.hpp"

namespace mff {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool decay_exempt = false;
};

/// Named, insertion-ordered parameter collection. Names are unique.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other) { *this = other; }
  ParameterSet& operator=(const ParameterSet& other) {
    if (this == &other) return *this;
    params_.clear();
    index_.clear();
    for (const auto& p : other.params_) add(p->name, p->value, p->decay_exempt);
    return *this;
  }
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter& add(std::string name, Tensor value, bool decay_exempt = false) {
    if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
    auto p = std::make_unique<Parameter>();
    p->grad = Tensor::zeros(value.shape());
    p->value = std::move(value);
    p->name = std::move(name);
    p->decay_exempt = decay_exempt;
    index_.emplace(p->name, params_.size());
    params_.push_back(std::move(p));
    return *params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return *params_[it->second];
  }
  const Parameter& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return *params_[it->second];
  }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  /// Total number of scalar weights.
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->grad.fill(0.0);
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid as long as the tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t i) const { return value().dim(i); }
  bool requires_grad() const;
};

class Tape {
 public:
  /// With grad_enabled=false nothing records a backward rule; used for
  /// inference and for the perturbed evaluations of gradient checks.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value) { return push(std::move(value), false, {}); }

  /// Free leaf that receives a gradient (not bound to any Parameter).
  Var variable(Tensor value) { return push(std::move(value), grad_enabled_, {}); }

  /// Leaf bound to a parameter. Repeated calls return the same node.
  Var param(Parameter& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return Var{this, it->second};
    Var v = push(p.value, grad_enabled_, {});
    nodes_[v.id].param = &p;
    bound_.emplace(&p, v.id);
    return v;
  }

  /// Appends an op node. `backward` receives the output gradient and must
  /// add into its inputs through grad_buffer().
  template <class Backward>
  Var record(Tensor value, const std::vector<Var>& inputs, Backward backward) {
#ifndef NDEBUG
    assert(value.all_finite() || !all_inputs_finite(inputs));
#endif
    bool needs = false;
    if (grad_enabled_) {
      for (const Var& in : inputs) {
        if (in.tape != this) throw ContractError("operands belong to different tapes");
        needs = needs || nodes_[in.id].requires_grad;
      }
    }
    if (!needs) return push(std::move(value), false, {});
    const std::size_t id = nodes_.size();
    return push(std::move(value), true, [this, id, backward = std::move(backward)]() {
      backward(nodes_[id].grad);
    });
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }

  const Tensor& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.size() == 0) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
  }

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient buffer for an input node, or nullptr when it needs none.
  double* grad_buffer(const Var& v) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.size() == 0) n.grad = Tensor::zeros(n.value.shape());
    return n.grad.raw();
  }

  /// Runs the reverse sweep from a scalar loss and adds leaf gradients into
  /// the bound parameters.
  void backward(const Var& loss) {
    if (loss.tape != this) throw ContractError("backward: loss is not on this tape");
    Node& root = nodes_.at(loss.id);
    if (root.value.size() != 1) {
      throw ContractError("backward needs a scalar loss, got shape " + shape_str(root.value.shape()));
    }
    if (!root.requires_grad) return;
    for (Node& n : nodes_) {
      if (n.grad.size()) n.grad.fill(0.0);
    }
    grad_buffer(loss)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward();
    }
    for (Node& n : nodes_) {
      if (!n.param || n.grad.size() == 0) continue;
      auto& dst = n.param->grad.data();
      const auto& src = n.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void()> backward;
    Parameter* param = nullptr;
  };

  Var push(Tensor value, bool requires_grad, std::function<void()> backward) {
    nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, std::move(backward), nullptr});
    return Var{this, nodes_.size() - 1};
  }

  bool all_inputs_finite(const std::vector<Var>& inputs) const {
    for (const Var& in : inputs) {
      if (!nodes_[in.id].value.all_finite()) return false;
    }
    return true;
  }

  bool grad_enabled_;
  std::deque<Node> nodes_;
  std::map<const Parameter*, std::size_t> bound_;
};

inline const Tensor& Var::value() const { return tape->value(id); }
inline const Tensor& Var::grad() const { return tape->grad(id); }
inline bool Var::requires_grad() const { return tape->requires_grad(id); }

// ---------------------------------------------------------------------------
// Raw kernels

namespace kernel {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

// c[m x n] += a[m x k] * b[k x n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  MapMat(c, M, N).noalias() += MapConstMat(a, M, K) * MapConstMat(b, K, N);
}

// c[m x k] += g[m x n] * b[k x n]^T
inline void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  MapMat(c, M, K).noalias() += MapConstMat(g, M, N) * MapConstMat(b, K, N).transpose();
}

// c[k x n] += a[m x k]^T * g[m x n]
inline void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  MapMat(c, K, N).noalias() += MapConstMat(a, M, K).transpose() * MapConstMat(g, M, N);
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace kernel

namespace detail {

inline void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.value().rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(v.shape()));
  }
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// a[m x k] * b[k x n].
inline Var matmul(const Var& a, const Var& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Tensor out({m, n});
  kernel::gemm_nn(a.value().raw(), b.value().raw(), out.raw(), m, k, n);
  Tape* tape = a.tape;
  return tape->record(std::move(out), {a, b}, [tape, a, b, m, k, n](const Tensor& g) {
    if (double* ga = tape->grad_buffer(a)) kernel::gemm_nt(g.raw(), b.value().raw(), ga, m, k, n);
    if (double* gb = tape->grad_buffer(b)) kernel::gemm_tn(a.value().raw(), g.raw(), gb, m, k, n);
  });
}

inline Var transpose(const Var& x) {
  detail::require_rank(x, 2, "transpose");
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out({n, m});
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = xv(i, j);
  Tape* tape = x.tape;
  return tape->record(std::move(out), {x}, [tape, x, m, n](const Tensor& g) {
    double* gx = tape->grad_buffer(x);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g(j, i);
  });
}

inline Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  Tape* tape = x.tape;
  return tape->record(std::move(out), {x}, [tape, x](const Tensor& g) {
    double* gx = tape->grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  Tape* tape = a.tape;
  return tape->record(std::move(out), {a, b}, [tape, a, b](const Tensor& g) {
    if (double* ga = tape->grad_buffer(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (double* gb = tape->grad_buffer(b))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  Tape* tape = a.tape;
  return tape->record(std::move(out), {a, b}, [tape, a, b](const Tensor& g) {
    if (double* ga = tape->grad_buffer(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (double* gb = tape->grad_buffer(b))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

/// Elementwise (Hadamard) product.
inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Tape* tape = a.tape;
  return tape->record(std::move(out), {a, b}, [tape, a, b](const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (double* ga = tape->grad_buffer(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    if (double* gb = tape->grad_buffer(b))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
  });
}

inline Var scale(const Var& x, double s) {
  Tensor out = x.value();
  for (auto& v : out.data()) v *= s;
  Tape* tape = x.tape;
  return tape->record(std::move(out), {x}, [tape, x, s](const Tensor& g) {
    double* gx = tape->grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
  });
}

/// x[m x n] + bias[n] broadcast over rows.
inline Var add_row_bias(const Var& x, const Var& bias) {
  detail::require_rank(x, 2, "add_row_bias");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.value().size() != n) {
    throw DimensionError("add_row_bias: bias " + shape_str(bias.shape()) + " vs input " +
                         shape_str(x.shape()));
  }
  Tensor out = x.value();
  const Tensor& bv = bias.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += bv[j];
  Tape* tape = x.tape;
  return tape->record(std::move(out), {x, bias}, [tape, x, bias, m, n](const Tensor& g) {
    if (double* gx = tape->grad_buffer(x))
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    if (double* gb = tape->grad_buffer(bias))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g(i, j);
  });
}

/// x[C x ...] + bias[C], broadcast over the trailing axes.
inline Var add_channel_bias(const Var& x, const Var& bias) {
  const std::size_t C = x.dim(0);
  if (bias.value().size() != C) {
    throw DimensionError("add_channel_bias: bias " + shape_str(bias.shape()) + " vs input " +
                         shape_str(x.shape()));
  }
  const std::size_t inner = x.value().size() / C;
  Tensor out = x.value();
  const Tensor& bv = bias.value();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < inner; ++i) out[c * inner + i] += bv[c];
  Tape* tape = x.tape;
  return tape->record(std::move(out), {x, bias}, [tape, x, bias, C, inner](const Tensor& g) {
    if (double* gx = tape->grad_buffer(x))
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    if (double* gb = tape->grad_buffer(bias))
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < inner; ++i) gb[c] += g[c * inner + i];
  });
}

/// [a | b] along the column axis; both T x *.
inline Var concat_cols(const Var& a, const Var& b) {
  detail::require_rank(a, 2, "concat_cols");
  detail::require_rank(b, 2, "concat_cols");
  const std::size_t T = a.dim(0), na = a.dim(1), nb = b.dim(1);
  if (b.dim(0) != T) {
    throw ContractError("concat_cols: time lengths differ, " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  }
  Tensor out({T, na + nb});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < na; ++j) out(t, j) = a.value()(t, j);
    for (std::size_t j = 0; j < nb; ++j) out(t, na + j) = b.value()(t, j);
  }
  Tape* tape = a.tape;
  return tape->record(std::move(out), {a, b}, [tape, a, b, T, na, nb](const Tensor& g) {
    if (double* ga = tape->grad_buffer(a))
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < na; ++j) ga[t * na + j] += g(t, j);
    if (double* gb = tape->grad_buffer(b))
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < nb; ++j) gb[t * nb + j] += g(t, na + j);
  });
}

/// Zeroes every row i of a 2-D tensor with keep[i] == false.
inline Var mask_rows(const Var& x, const std::vector<bool>& keep) {
  detail::require_rank(x, 2, "mask_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (keep.size() != m) throw DimensionError("mask_rows: mask length differs from row count");
  Tensor out = x.value();
  for (std::size_t i = 0; i < m; ++i)
    if (!keep[i])
      for (std::size_t j = 0; j < n; ++j) out(i, j) = 0.0;
  Tape* tape = x.tape;
  return tape->record(std::move(out), {x}, [tape, x, keep, m, n](const Tensor& g) {
    double* gx = tape->grad_buffer(x);
    for (std::size_t i = 0; i < m; ++i)
      if (keep[i])
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g(i, j);
  });
}

inline Var sum(const Var& x) {
  Tensor out({1}, x.value().sum());
  Tape* tape = x.tape;
  return tape->record(std::move(out), {x}, [tape, x](const Tensor& g) {
    double* gx = tape->grad_buffer(x);
    const std::size_t n = x.value().size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += g[0];
  });
}

inline Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

// ---------------------------------------------------------------------------
// Activations

inline Var silu(const Var& x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * kernel::sigmoid(xv[i]);
  Tape* tape = x.tape;
  return tape->record(std::move(out), {x}, [tape, x](const Tensor& g) {
    double* gx = tape->grad_buffer(x);
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = kernel::sigmoid(xv[i]);
      gx[i] += g[i] * s * (1.0 + xv[i] * (1.0 - s));
    }
  });
}

/// Exact (erf-based) GELU.
inline Var gelu(const Var& x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i)
    out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] / std::numbers::sqrt2));
  Tape* tape = x.tape;
  return tape->record(std::move(out), {x}, [tape, x](const Tensor& g) {
    double* gx = tape->grad_buffer(x);
    const Tensor& xv = x.value();
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(xv[i] / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xv[i] * xv[i]);
      gx[i] += g[i] * (cdf + xv[i] * pdf);
    }
  });
}

/// Inverted dropout: survivors are scaled by 1/(1-rate), so evaluation mode
/// (training=false) is exactly the identity.
inline Var dropout(const Var& x, double rate, std::uint64_t seed, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ParameterError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  const Tensor& xv = x.value();
  Tensor mask(xv.shape());
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = keep(rng) ? s : 0.0;
    out[i] = xv[i] * mask[i];
  }
  Tape* tape = x.tape;
  return tape->record(std::move(out), {x}, [tape, x, mask = std::move(mask)](const Tensor& g) {
    double* gx = tape->grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

// ---------------------------------------------------------------------------
// Convolutions and pooling (cross-correlation, no kernel flip)

/// Causal dilated 1-D convolution. x is T x Cin, w is k x Cin x Cout. Tap
/// k-1 sits on the current step, tap kk reads step t - (k-1-kk)*dilation;
/// reads before t=0 see zeros, so the output keeps length T.
inline Var causal_conv1d(const Var& x, const Var& w, std::size_t dilation) {
  detail::require_rank(x, 2, "causal_conv1d");
  detail::require_rank(w, 3, "causal_conv1d");
  if (dilation < 1) throw ParameterError("causal_conv1d: dilation must be >= 1");
  const std::size_t T = x.dim(0), cin = x.dim(1);
  const std::size_t k = w.dim(0), cout = w.dim(2);
  if (w.dim(1) != cin) {
    throw DimensionError("causal_conv1d: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(w.shape()));
  }
  Tensor out({T, cout});
  const double* xv = x.value().raw();
  const double* wv = w.value().raw();
  for (std::size_t kk = 0; kk < k; ++kk) {
    const std::size_t shift = (k - 1 - kk) * dilation;
    if (shift >= T) continue;
    // out[shift:, :] += x[:T-shift, :] * w[kk]
    kernel::gemm_nn(xv, wv + kk * cin * cout, out.raw() + shift * cout, T - shift, cin, cout);
  }
  Tape* tape = x.tape;
  return tape->record(std::move(out), {x, w}, [tape, x, w, T, cin, cout, k, dilation](const Tensor& g) {
    double* gx = tape->grad_buffer(x);
    double* gw = tape->grad_buffer(w);
    const double* xv = x.value().raw();
    const double* wv = w.value().raw();
    for (std::size_t kk = 0; kk < k; ++kk) {
      const std::size_t shift = (k - 1 - kk) * dilation;
      if (shift >= T) continue;
      const double* gs = g.raw() + shift * cout;
      if (gx) kernel::gemm_nt(gs, wv + kk * cin * cout, gx, T - shift, cin, cout);
      if (gw) kernel::gemm_tn(xv, gs, gw + kk * cin * cout, T - shift, cin, cout);
    }
  });
}

enum class Padding { same, none };

/// 2-D cross-correlation. x is Cin x H x W, w is kh x kw x Cin x Cout; the
/// result is Cout x H' x W'. Padding::same pads (kh-1)/2 rows and (kw-1)/2
/// columns in front (the remainder behind) so H' = H and W' = W.
inline Var conv2d(const Var& x, const Var& w, Padding padding) {
  detail::require_rank(x, 3, "conv2d");
  detail::require_rank(w, 4, "conv2d");
  const std::size_t cin = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t kh = w.dim(0), kw = w.dim(1), cout = w.dim(3);
  if (w.dim(2) != cin) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  }
  std::size_t ph = 0, pw = 0, Ho = 0, Wo = 0;
  if (padding == Padding::same) {
    ph = (kh - 1) / 2;
    pw = (kw - 1) / 2;
    Ho = H;
    Wo = W;
  } else {
    if (kh > H || kw > W) {
      throw ParameterError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                           " exceeds input " + std::to_string(H) + "x" + std::to_string(W));
    }
    Ho = H - kh + 1;
    Wo = W - kw + 1;
  }
  // Each tap (a, b) is one gemm against a shifted copy of the input:
  // out[co, i, j] += sum_ci w[a, b, ci, co] * x[ci, i + a - ph, j + b - pw].
  const std::size_t HWo = Ho * Wo;
  auto gather = [cin, H, W, Ho, Wo, ph, pw](const double* xv, std::size_t a, std::size_t b, double* dst) {
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t i = 0; i < Ho; ++i) {
        const long si = static_cast<long>(i + a) - static_cast<long>(ph);
        for (std::size_t j = 0; j < Wo; ++j) {
          const long sj = static_cast<long>(j + b) - static_cast<long>(pw);
          const bool inside = si >= 0 && si < static_cast<long>(H) && sj >= 0 && sj < static_cast<long>(W);
          dst[(ci * Ho + i) * Wo + j] = inside ? xv[(ci * H + static_cast<std::size_t>(si)) * W + static_cast<std::size_t>(sj)] : 0.0;
        }
      }
  };
  Tensor out({cout, Ho, Wo});
  std::vector<double> shifted(cin * HWo);
  for (std::size_t a = 0; a < kh; ++a)
    for (std::size_t b = 0; b < kw; ++b) {
      gather(x.value().raw(), a, b, shifted.data());
      kernel::gemm_tn(w.value().raw() + (a * kw + b) * cin * cout, shifted.data(), out.raw(), cin, cout, HWo);
    }
  Tape* tape = x.tape;
  return tape->record(std::move(out), {x, w},
                      [tape, x, w, cin, H, W, kh, kw, cout, ph, pw, Ho, Wo, HWo, gather](const Tensor& g) {
    double* gx = tape->grad_buffer(x);
    double* gw = tape->grad_buffer(w);
    std::vector<double> shifted(cin * HWo);
    for (std::size_t a = 0; a < kh; ++a)
      for (std::size_t b = 0; b < kw; ++b) {
        const std::size_t tap = (a * kw + b) * cin * cout;
        if (gw) {
          gather(x.value().raw(), a, b, shifted.data());
          kernel::gemm_nt(shifted.data(), g.raw(), gw + tap, cin, cout, HWo);
        }
        if (gx) {
          std::fill(shifted.begin(), shifted.end(), 0.0);
          kernel::gemm_nn(w.value().raw() + tap, g.raw(), shifted.data(), cin, cout, HWo);
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t i = 0; i < Ho; ++i) {
              const long si = static_cast<long>(i + a) - static_cast<long>(ph);
              if (si < 0 || si >= static_cast<long>(H)) continue;
              for (std::size_t j = 0; j < Wo; ++j) {
                const long sj = static_cast<long>(j + b) - static_cast<long>(pw);
                if (sj < 0 || sj >= static_cast<long>(W)) continue;
                gx[(ci * H + static_cast<std::size_t>(si)) * W + static_cast<std::size_t>(sj)] +=
                    shifted[(ci * Ho + i) * Wo + j];
              }
            }
        }
      }
  });
}

/// Non-overlapping window means over the last two axes of C x H x W.
inline Var avg_pool2d(const Var& x, std::size_t ph, std::size_t pw) {
  detail::require_rank(x, 3, "avg_pool2d");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (ph < 1 || pw < 1 || ph > H || pw > W) {
    throw ParameterError("avg_pool2d: window " + std::to_string(ph) + "x" + std::to_string(pw) +
                         " does not fit input " + shape_str(x.shape()));
  }
  const std::size_t Ho = H / ph, Wo = W / pw;
  const double inv = 1.0 / static_cast<double>(ph * pw);
  Tensor out({C, Ho, Wo});
  const Tensor& xv = x.value();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < Ho * ph; ++i)
      for (std::size_t j = 0; j < Wo * pw; ++j) out(c, i / ph, j / pw) += xv(c, i, j) * inv;
  Tape* tape = x.tape;
  return tape->record(std::move(out), {x}, [tape, x, C, H, W, Ho, Wo, ph, pw, inv](const Tensor& g) {
    double* gx = tape->grad_buffer(x);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < Ho * ph; ++i)
        for (std::size_t j = 0; j < Wo * pw; ++j) gx[(c * H + i) * W + j] += g(c, i / ph, j / pw) * inv;
  });
}

/// Stacks n tensors of shape T x K into a K x n x T tensor (feature-major,
/// scale axis in the middle).
inline Var stack_scales(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("stack_scales: no inputs");
  const std::size_t T = parts[0].dim(0), K = parts[0].dim(1), n = parts.size();
  for (const Var& p : parts) {
    if (p.shape() != parts[0].shape()) throw DimensionError("stack_scales: inputs differ in shape");
  }
  Tensor out({K, n, T});
  for (std::size_t s = 0; s < n; ++s) {
    const Tensor& pv = parts[s].value();
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t k = 0; k < K; ++k) out(k, s, t) = pv(t, k);
  }
  Tape* tape = parts[0].tape;
  return tape->record(std::move(out), parts, [tape, parts, T, K, n](const Tensor& g) {
    for (std::size_t s = 0; s < n; ++s) {
      double* gp = tape->grad_buffer(parts[s]);
      if (!gp) continue;
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t k = 0; k < K; ++k) gp[t * K + k] += g(k, s, t);
    }
  });
}

// ---------------------------------------------------------------------------
// Contrastive scoring

/// For a square score matrix S, returns sum_i ( logsumexp_j S[i][j] - S[i][i] ):
/// the InfoNCE objective with the diagonal as positives and every other
/// entry of the row as a negative. Each row is max-shifted before exp.
inline Var infonce_rows(const Var& scores) {
  detail::require_rank(scores, 2, "infonce_rows");
  const std::size_t n = scores.dim(0);
  if (scores.dim(1) != n) throw DimensionError("infonce_rows: score matrix must be square");
  const Tensor& s = scores.value();
  Tensor soft({n, n});
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = s(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, s(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      soft(i, j) = std::exp(s(i, j) - mx);
      z += soft(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) soft(i, j) /= z;
    total += mx + std::log(z) - s(i, i);
  }
  Tape* tape = scores.tape;
  return tape->record(Tensor({1}, total), {scores}, [tape, scores, soft = std::move(soft), n](const Tensor& g) {
    double* gs = tape->grad_buffer(scores);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) gs[i * n + j] += g[0] * soft(i, j);
      gs[i * n + i] -= g[0];
    }
  });
}

// ---------------------------------------------------------------------------
// Spectral ops. A complex c x F matrix travels as two real Vars.

struct ComplexVar {
  Var re;
  Var im;
  std::size_t origin_length = 0;

  std::size_t bins() const { return re.dim(0); }
  std::size_t features() const { return re.dim(1); }
};

namespace detail {

// Real part of sum_{j<c} G[j] exp(+2 pi i j t / T) for every t, per column:
// the adjoint of the half-spectrum forward transform.
inline void rfft_adjoint(const spectral::FftPlan& plan, const Tensor& gre, const Tensor& gim, double* out,
                         std::size_t T, std::size_t F) {
  const std::size_t c = gre.dim(0);
  std::vector<spectral::cplx> buf(T);
  for (std::size_t f = 0; f < F; ++f) {
    std::fill(buf.begin(), buf.end(), spectral::cplx(0.0, 0.0));
    for (std::size_t j = 0; j < c; ++j) buf[j] = spectral::cplx(gre(j, f), gim(j, f));
    plan.inverse_unnormalized(buf);
    for (std::size_t t = 0; t < T; ++t) out[t * F + f] += buf[t].real();
  }
}

}  // namespace detail

/// Half-spectrum FFT over the time axis of a T x F Var.
inline ComplexVar rfft(const Var& x) {
  detail::require_rank(x, 2, "rfft");
  const spectral::ComplexSpectrum s = spectral::rfft(x.value());
  const std::size_t T = x.dim(0), F = x.dim(1), c = s.bins();
  Tensor re({c, F}), im({c, F});
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    re[i] = s.values[i].real();
    im[i] = s.values[i].imag();
  }
  Tape* tape = x.tape;
  Var vre = tape->record(std::move(re), {x}, [tape, x, T, F, c](const Tensor& g) {
    const spectral::FftPlan plan(T);
    detail::rfft_adjoint(plan, g, Tensor::zeros({c, F}), tape->grad_buffer(x), T, F);
  });
  Var vim = tape->record(std::move(im), {x}, [tape, x, T, F, c](const Tensor& g) {
    const spectral::FftPlan plan(T);
    detail::rfft_adjoint(plan, Tensor::zeros({c, F}), g, tape->grad_buffer(x), T, F);
  });
  return ComplexVar{vre, vim, T};
}

/// Inverse half-spectrum FFT (1/T normalization) back to T x F.
inline Var irfft(const ComplexVar& s) {
  const std::size_t T = s.origin_length, c = s.bins(), F = s.features();
  if (s.re.shape() != s.im.shape() || c != spectral::ComplexSpectrum::bins_for(T)) {
    throw ContractError("irfft: malformed spectrum");
  }
  spectral::ComplexSpectrum spec(T, F);
  for (std::size_t i = 0; i < spec.values.size(); ++i)
    spec.values[i] = spectral::cplx(s.re.value()[i], s.im.value()[i]);
  Tensor out = spectral::irfft(spec);
  Tape* tape = s.re.tape;
  Var re = s.re, im = s.im;
  return tape->record(std::move(out), {re, im}, [tape, re, im, T, c, F](const Tensor& g) {
    // d x[t] / d Re X[j] =  w_j cos(2 pi j t / T) / T
    // d x[t] / d Im X[j] = -w_j sin(2 pi j t / T) / T
    // with w_j = 1 at DC and Nyquist, 2 elsewhere; the imaginary parts of
    // DC and Nyquist are discarded by the forward pass.
    const spectral::ComplexSpectrum gs = spectral::rfft(g);
    double* gre = tape->grad_buffer(re);
    double* gim = tape->grad_buffer(im);
    const double inv = 1.0 / static_cast<double>(T);
    for (std::size_t j = 0; j < c; ++j) {
      const bool endpoint = (j == 0) || (T % 2 == 0 && j == T / 2);
      const double wj = endpoint ? inv : 2.0 * inv;
      for (std::size_t f = 0; f < F; ++f) {
        const spectral::cplx v = gs.at(j, f);
        if (gre) gre[j * F + f] += wj * v.real();
        if (gim && !endpoint) gim[j * F + f] += wj * v.imag();
      }
    }
  });
}

/// Elementwise complex modulus. The derivative at an exactly-zero entry is
/// taken as zero.
inline Var amplitude(const ComplexVar& s) {
  const Tensor& re = s.re.value();
  const Tensor& im = s.im.value();
  Tensor out(re.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::hypot(re[i], im[i]);
  Tape* tape = s.re.tape;
  Var vre = s.re, vim = s.im;
  Tensor amp = out;
  return tape->record(std::move(out), {vre, vim}, [tape, vre, vim, amp = std::move(amp)](const Tensor& g) {
    const Tensor& re = vre.value();
    const Tensor& im = vim.value();
    double* gre = tape->grad_buffer(vre);
    double* gim = tape->grad_buffer(vim);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (amp[i] == 0.0) continue;
      if (gre) gre[i] += g[i] * re[i] / amp[i];
      if (gim) gim[i] += g[i] * im[i] / amp[i];
    }
  });
}

/// Elementwise atan2(im, re) in (-pi, pi]; zero entries have phase 0 and
/// zero derivative.
inline Var phase(const ComplexVar& s) {
  const Tensor& re = s.re.value();
  const Tensor& im = s.im.value();
  Tensor out(re.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (re[i] == 0.0 && im[i] == 0.0) continue;
    out[i] = std::atan2(im[i], re[i]);
    if (out[i] == -std::numbers::pi) out[i] = std::numbers::pi;
  }
  Tape* tape = s.re.tape;
  Var vre = s.re, vim = s.im;
  return tape->record(std::move(out), {vre, vim}, [tape, vre, vim](const Tensor& g) {
    const Tensor& re = vre.value();
    const Tensor& im = vim.value();
    double* gre = tape->grad_buffer(vre);
    double* gim = tape->grad_buffer(vim);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double r2 = re[i] * re[i] + im[i] * im[i];
      if (r2 == 0.0) continue;
      if (gre) gre[i] -= g[i] * im[i] / r2;
      if (gim) gim[i] += g[i] * re[i] / r2;
    }
  });
}

}  // namespace mff
