#include <gtest/gtest.h>

#include <cmath>

#include "mff/autodiff.hpp"
#include "mff/gradcheck.hpp"
#include "support.hpp"

namespace mff {
namespace {

using testing::Gen;

Tensor run(const std::function<Var(Tape&)>& f) {
  Tape tape(false);
  return f(tape).value();
}

TEST(Tensor, RejectsMismatchedDataLength) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor out = run([&](Tape& t) { return matmul(t.constant(Tensor::identity(2)), t.constant(m)); });
  EXPECT_EQ(out, m);
}

TEST(Matmul, HandArithmetic) {
  const Tensor out = run([](Tape& t) {
    return matmul(t.constant(Tensor::matrix({{1, 2}})), t.constant(Tensor::matrix({{3}, {4}})));
  });
  ASSERT_EQ(out.shape(), (Shape{1, 1}));
  EXPECT_EQ(out[0], 11.0);
}

TEST(Matmul, InnerDimensionMismatchThrows) {
  Tape t;
  EXPECT_THROW(matmul(t.constant(Tensor({2, 3})), t.constant(Tensor({2, 3}))), DimensionError);
}

TEST(Matmul, GradientOfSumIsRowBroadcastOfColumnSums) {
  Gen g(11);
  const Tensor a = g.tensor({5, 4});
  const Tensor b = g.tensor({4, 3});
  Tape tape;
  Var av = tape.variable(a);
  tape.backward(sum(matmul(av, tape.constant(b))));
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      double colsum = 0.0;
      for (std::size_t j = 0; j < 3; ++j) colsum += b(k, j);
      EXPECT_NEAR(av.grad()(i, k), colsum, 1e-12);
    }
  }
  const double err = finite_diff_check([&](Tape& t, const Var& x) { return sum(matmul(x, t.constant(b))); }, a);
  EXPECT_LT(err, 1e-6);
}

TEST(CausalConv1d, KernelOneIdentityChannelMapIsIdentity) {
  Gen g(2);
  const Tensor x = g.tensor({6, 3});
  Tensor w({1, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) w(0, c, c) = 1.0;
  const Tensor out = run([&](Tape& t) { return causal_conv1d(t.constant(x), t.constant(w), 1); });
  EXPECT_EQ(out, x);
}

TEST(CausalConv1d, ZeroLeftPadHandArithmetic) {
  const Tensor x({4, 1}, std::vector<double>{1, 2, 3, 4});
  const Tensor w({2, 1, 1}, std::vector<double>{1, 1});
  const Tensor out = run([&](Tape& t) { return causal_conv1d(t.constant(x), t.constant(w), 1); });
  EXPECT_EQ(out, Tensor({4, 1}, std::vector<double>{1, 3, 5, 7}));
}

TEST(CausalConv1d, OutputAtTDependsOnlyOnPast) {
  Gen g(3);
  const Tensor w = g.tensor({3, 2, 2});
  Tensor x = g.tensor({12, 2});
  const Tensor before = run([&](Tape& t) { return causal_conv1d(t.constant(x), t.constant(w), 2); });
  x(8, 0) += 5.0;
  x(8, 1) -= 3.0;
  const Tensor after = run([&](Tape& t) { return causal_conv1d(t.constant(x), t.constant(w), 2); });
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(before(t, c), after(t, c));
}

TEST(Conv2d, OneByOneUnitKernelIsIdentity) {
  Gen g(4);
  const Tensor x = g.tensor({1, 3, 5});
  const Tensor w({1, 1, 1, 1}, 1.0);
  const Tensor out = run([&](Tape& t) { return conv2d(t.constant(x), t.constant(w), Padding::same); });
  EXPECT_EQ(out, x);
}

TEST(Conv2d, ValidThreeByThreeOnes) {
  const Tensor out = run([](Tape& t) {
    return conv2d(t.constant(Tensor({1, 3, 3}, 1.0)), t.constant(Tensor({3, 3, 1, 1}, 1.0)), Padding::none);
  });
  ASSERT_EQ(out.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(out[0], 9.0);
}

TEST(Conv2d, SamePaddingMatchesDirectSum) {
  Gen g(5);
  const Tensor x = g.tensor({2, 4, 5});
  const Tensor w = g.tensor({3, 3, 2, 3});
  const Tensor out = run([&](Tape& t) { return conv2d(t.constant(x), t.constant(w), Padding::same); });
  ASSERT_EQ(out.shape(), (Shape{3, 4, 5}));
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double s = 0.0;
        for (std::size_t a = 0; a < 3; ++a)
          for (std::size_t b = 0; b < 3; ++b) {
            const long ii = static_cast<long>(i + a) - 1, jj = static_cast<long>(j + b) - 1;
            if (ii < 0 || jj < 0 || ii >= 4 || jj >= 5) continue;
            for (std::size_t c = 0; c < 2; ++c)
              s += w(a, b, c, o) * x(c, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
          }
        EXPECT_NEAR(out(o, i, j), s, 1e-12);
      }
}

TEST(AvgPool2d, UnitWindowIsIdentity) {
  Gen g(6);
  const Tensor x = g.tensor({2, 3, 4});
  EXPECT_EQ(run([&](Tape& t) { return avg_pool2d(t.constant(x), 1, 1); }), x);
}

TEST(AvgPool2d, TwoByTwoMean) {
  const Tensor out = run([](Tape& t) {
    return avg_pool2d(t.constant(Tensor({1, 2, 2}, std::vector<double>{1, 2, 3, 4})), 2, 2);
  });
  ASSERT_EQ(out.shape(), (Shape{1, 1, 1}));
  EXPECT_DOUBLE_EQ(out[0], 2.5);
}

TEST(AvgPool2d, OversizedWindowThrows) {
  Tape t;
  EXPECT_THROW(avg_pool2d(t.constant(Tensor({1, 2, 2})), 3, 1), ParameterError);
}

TEST(Silu, KnownValues) {
  const Tensor out = run([](Tape& t) { return silu(t.constant(Tensor({2}, std::vector<double>{0.0, 1.0}))); });
  EXPECT_EQ(out[0], 0.0);
  EXPECT_NEAR(out[1], 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(out[1], 0.731058579, 1e-9);
}

TEST(Silu, GradientAtZeroIsHalf) {
  Tape tape;
  Var x = tape.variable(Tensor({1}, 0.0));
  tape.backward(sum(silu(x)));
  EXPECT_NEAR(x.grad()[0], 0.5, 1e-15);
  EXPECT_LT(finite_diff_check([](Tape&, const Var& v) { return sum(silu(v)); }, Tensor({1}, 0.0)), 1e-8);
}

TEST(Dropout, RateZeroAndEvalModeAreIdentity) {
  Gen g(7);
  const Tensor x = g.tensor({50});
  EXPECT_EQ(run([&](Tape& t) { return dropout(t.constant(x), 0.0, 1, true); }), x);
  EXPECT_EQ(run([&](Tape& t) { return dropout(t.constant(x), 0.7, 1, false); }), x);
}

TEST(Dropout, InvalidRateThrows) {
  Tape t;
  EXPECT_THROW(dropout(t.constant(Tensor({3})), 1.0, 0, true), ParameterError);
  EXPECT_THROW(dropout(t.constant(Tensor({3})), -0.1, 0, true), ParameterError);
}

TEST(Dropout, MillionElementStatistics) {
  const std::size_t n = 1000000;
  Tensor x({n});
  Gen g(8);
  for (std::size_t i = 0; i < n; ++i) x[i] = 1.0 + g.real(0.0, 1.0);
  const Tensor out = run([&](Tape& t) { return dropout(t.constant(x), 0.5, 42, true); });
  std::size_t zeros = 0;
  double in_mean = 0.0, out_mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    zeros += out[i] == 0.0;
    in_mean += x[i];
    out_mean += out[i];
    if (out[i] != 0.0) {
      EXPECT_DOUBLE_EQ(out[i], 2.0 * x[i]);
    }
  }
  EXPECT_NEAR(static_cast<double>(zeros) / n, 0.5, 0.01);
  EXPECT_NEAR(out_mean / in_mean, 1.0, 0.01);
}

TEST(Dropout, SeededAndReproducible) {
  Gen g(9);
  const Tensor x = g.tensor({200});
  auto f = [&](std::uint64_t seed) { return run([&](Tape& t) { return dropout(t.constant(x), 0.3, seed, true); }); };
  EXPECT_EQ(f(5), f(5));
  EXPECT_NE(f(5), f(6));
}

TEST(Backward, SumGivesOnes) {
  ParameterSet ps;
  Gen g(10);
  Parameter& p = ps.add("p", g.tensor({3, 2}));
  Tape tape;
  tape.backward(sum(tape.param(p)));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(p.grad[i], 1.0);
}

TEST(Backward, SumOfSquaresGivesTwiceParameter) {
  ParameterSet ps;
  Gen g(12);
  Parameter& p = ps.add("p", g.tensor({4}));
  Tape tape;
  Var v = tape.param(p);
  tape.backward(sum(mul(v, v)));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(p.grad[i], 2.0 * p.value[i]);
}

TEST(Backward, UnreachableParameterGetsZeroGradient) {
  ParameterSet ps;
  Parameter& used = ps.add("used", Tensor({2}, 1.0));
  Parameter& unused = ps.add("unused", Tensor({2}, 1.0));
  unused.grad = Tensor({2}, 7.0);
  ps.zero_grad();
  Tape tape;
  tape.param(unused);
  tape.backward(sum(tape.param(used)));
  EXPECT_EQ(unused.grad, Tensor({2}, 0.0));
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape tape;
  Var x = tape.variable(Tensor({2}, 1.0));
  EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Backward, DuplicateParameterNameIsContractError) {
  ParameterSet ps;
  ps.add("a", Tensor({1}));
  EXPECT_THROW(ps.add("a", Tensor({1})), ContractError);
}

TEST(FiniteDiff, SumOfSquaresIsExact) {
  Gen g(13);
  const double err = finite_diff_check([](Tape&, const Var& v) { return sum(mul(v, v)); }, g.tensor({6}));
  EXPECT_LT(err, 1e-9);
}

TEST(FiniteDiff, SiluSumSelfTest) {
  Gen g(14);
  EXPECT_LT(finite_diff_check([](Tape&, const Var& v) { return sum(silu(v)); }, g.tensor({10})), 1e-7);
}

TEST(FiniteDiff, DetectsAWrongGradient) {
  // A deliberately broken op: forward x^2, backward claims 3x.
  auto broken = [](Tape&, const Var& v) {
    Tensor out = v.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= out[i];
    Tape* tape = v.tape;
    Var sq = tape->record(std::move(out), {v}, [tape, v](const Tensor& g) {
      double* gx = tape->grad_buffer(v);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 3.0 * g[i] * v.value()[i];
    });
    return sum(sq);
  };
  EXPECT_NEAR(finite_diff_check(broken, Tensor({3}, std::vector<double>{1, 2, 3})), 1.0 / 3.0, 1e-6);
}

TEST(FiniteDiff, RelativeErrorFormula) {
  EXPECT_DOUBLE_EQ(fd_relative_error(2.0, 1.0), 1.0 / (2.0 + 1e-8));
  EXPECT_EQ(fd_relative_error(0.0, 5e-10), 0.0);
  EXPECT_GT(fd_relative_error(0.0, 1e-6), 1.0);
  // A loss near 671 with step 1e-5 leaves ~1e-8 of round-off in a zero gradient.
  const double floor = fd_noise_floor(671.0, 1e-5);
  EXPECT_GT(floor, 1.2e-8);
  EXPECT_EQ(fd_relative_error(6e-15, -1.14e-8, floor), 0.0);
  EXPECT_GT(fd_relative_error(1e-3, 2e-3, floor), 0.4);
}

TEST(Infonce, MatchesBruteForce) {
  const Tensor s = Tensor::matrix({{1.0, -0.5, 2.0}, {0.3, 0.7, -1.2}, {2.5, 0.1, 0.4}});
  const Tensor out = run([&](Tape& t) { return infonce_rows(t.constant(s)); });
  double want = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < 3; ++j) z += std::exp(s(i, j));
    want += -std::log(std::exp(s(i, i)) / z);
  }
  EXPECT_NEAR(out[0], want, 1e-12);
}

TEST(Infonce, StableForLargeScores) {
  const Tensor s = Tensor::matrix({{1000.0, 999.0}, {-1000.0, -1001.0}});
  const Tensor out = run([&](Tape& t) { return infonce_rows(t.constant(s)); });
  const double want = std::log1p(std::exp(-1.0)) + (std::log1p(std::exp(1.0)));
  EXPECT_NEAR(out[0], want, 1e-12);
}

// ---------------------------------------------------------------------------
// Gradients of every primitive against central differences, on random
// shapes from the generator.

class PrimitiveGradients : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(PrimitiveGradients, MatchFiniteDifferences) {
  Gen g(GetParam());
  const std::size_t T = g.size(3, 9), C = g.size(1, 4), O = g.size(1, 4);
  const Tensor x = g.tensor({T, C});
  const std::uint64_t wseed = GetParam() * 31 + 1;
  // Contracts each output with fixed random weights so every entry matters.
  auto S = [wseed](Tape& t, const Var& v) {
    Gen w(wseed);
    return sum(mul(v, t.constant(w.tensor(v.shape()))));
  };
  auto W = [wseed](Tape& t, Shape s) {
    Gen w(wseed + 7);
    return t.constant(w.tensor(std::move(s)));
  };
  const double tol = 1e-5;
  auto check = [&](const char* name, const ScalarFn& f, const Tensor& in) {
    EXPECT_LT(finite_diff_check(f, in), tol) << name << " seed " << GetParam();
  };
  check("matmul lhs", [&](Tape& t, const Var& v) { return S(t, matmul(v, W(t, {C, O}))); }, x);
  check("matmul rhs", [&](Tape& t, const Var& v) { return S(t, matmul(W(t, {O, T}), v)); }, x);
  check("transpose", [&](Tape& t, const Var& v) { return S(t, transpose(v)); }, x);
  check("reshape", [&](Tape& t, const Var& v) { return S(t, reshape(v, {C, T})); }, x);
  check("add", [&](Tape& t, const Var& v) { return S(t, add(v, mul(v, v))); }, x);
  check("sub", [&](Tape& t, const Var& v) { return S(t, sub(mul(v, v), v)); }, x);
  check("scale", [&](Tape& t, const Var& v) { return S(t, scale(v, -1.7)); }, x);
  check("silu", [&](Tape& t, const Var& v) { return S(t, silu(v)); }, x);
  check("gelu", [&](Tape& t, const Var& v) { return S(t, gelu(v)); }, x);
  check("row bias", [&](Tape& t, const Var& v) { return S(t, add_row_bias(W(t, {T, C}), v)); }, g.tensor({C}));
  check("dropout", [&](Tape& t, const Var& v) { return S(t, dropout(v, 0.4, 3, true)); }, x);
  const std::size_t k = g.size(1, 3), dil = g.size(1, 3);
  check("conv1d input", [&](Tape& t, const Var& v) { return S(t, causal_conv1d(v, W(t, {k, C, O}), dil)); }, x);
  check("conv1d weight", [&](Tape& t, const Var& v) { return S(t, causal_conv1d(W(t, {T, C}), v, dil)); },
        g.tensor({k, C, O}));
  const Tensor img = g.tensor({C, 3, T});
  check("conv2d input", [&](Tape& t, const Var& v) { return S(t, conv2d(v, W(t, {3, 3, C, O}), Padding::same)); }, img);
  check("conv2d weight", [&](Tape& t, const Var& v) { return S(t, conv2d(W(t, {C, 3, T}), v, Padding::same)); },
        g.tensor({3, 3, C, O}));
  check("conv2d valid", [&](Tape& t, const Var& v) { return S(t, conv2d(v, W(t, {2, 2, C, O}), Padding::none)); }, img);
  check("avg pool", [&](Tape& t, const Var& v) { return S(t, avg_pool2d(v, 3, 1)); }, img);
  check("channel bias", [&](Tape& t, const Var& v) { return S(t, add_channel_bias(W(t, {C, 3, T}), v)); },
        g.tensor({C}));
  check("stack", [&](Tape& t, const Var& v) { return S(t, stack_scales({v, scale(v, 2.0), mul(v, v)})); }, x);
  check("concat", [&](Tape& t, const Var& v) { return S(t, concat_cols(v, mul(v, v))); }, x);
  std::vector<bool> keep(T);
  for (std::size_t i = 0; i < T; ++i) keep[i] = g.coin();
  check("mask rows", [&](Tape& t, const Var& v) { return S(t, mask_rows(v, keep)); }, x);
  check("mean", [&](Tape&, const Var& v) { return mean(mul(v, v)); }, x);
  check("infonce", [&](Tape&, const Var& v) { return infonce_rows(matmul(v, transpose(v))); }, x);
  check("rfft real", [&](Tape& t, const Var& v) { return S(t, rfft(v).re); }, x);
  check("rfft imag", [&](Tape& t, const Var& v) { return S(t, rfft(v).im); }, x);
  check("irfft", [&](Tape& t, const Var& v) {
    ComplexVar c = rfft(v);
    return S(t, irfft(ComplexVar{mul(c.re, c.re), c.im, T}));
  }, x);
  check("amplitude", [&](Tape& t, const Var& v) { return S(t, amplitude(rfft(v))); }, x);
  check("phase", [&](Tape& t, const Var& v) {
    ComplexVar c = rfft(v);
    // Offset keeps every bin away from the origin, where phase is singular.
    return S(t, phase(ComplexVar{add(c.re, W(t, c.re.shape())), add(c.im, W(t, c.im.shape())), T}));
  }, x);
}

INSTANTIATE_TEST_SUITE_P(RandomShapes, PrimitiveGradients, ::testing::Range<std::uint64_t>(1, 9));

}  // namespace
}  // namespace mff
