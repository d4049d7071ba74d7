#include <gtest/gtest.h>

#include <cmath>

#include "mff/ctcm.hpp"
#include "mff/gradcheck.hpp"
#include "support.hpp"

namespace mff::ctcm {
namespace {

using testing::Gen;

ParameterSet make_params(std::size_t K, const CtcmConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterSet ps;
  make_ctcm_params(K, cfg, rng, ps);
  make_fusion_params(K, rng, ps);
  return ps;
}

void zero_all(ParameterSet& ps) {
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i].value.fill(0.0);
}

TEST(MultiscaleConv, KernelOneIdentityGivesTransposedInput) {
  const std::size_t T = 7, K = 4;
  CtcmConfig cfg;
  cfg.kernels = {1};
  ParameterSet ps = make_params(K, cfg, 1);
  zero_all(ps);
  for (std::size_t k = 0; k < K; ++k) ps.get("ctcm.scale_k1.weight").value(0, k, k) = 1.0;
  Gen g(1);
  const Tensor r = g.tensor({T, K});
  Tape tape(false);
  const Tensor h = multiscale_conv(tape, ps, tape.constant(r), cfg.kernels).value();
  ASSERT_EQ(h.shape(), (Shape{K, 1, T}));
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t t = 0; t < T; ++t) EXPECT_EQ(h(k, 0, t), r(t, k));
}

TEST(MultiscaleConv, DefaultHasEightScales) {
  const CtcmConfig cfg;
  EXPECT_EQ(cfg.kernels.size(), 8u);
  ParameterSet ps = make_params(4, cfg, 2);
  Gen g(2);
  Tape tape(false);
  EXPECT_EQ(multiscale_conv(tape, ps, tape.constant(g.tensor({130, 4})), cfg.kernels).shape(), (Shape{4, 8, 130}));
}

TEST(MultiscaleConv, KernelLongerThanWindowThrows) {
  CtcmConfig cfg;
  cfg.kernels = {1, 16};
  ParameterSet ps = make_params(4, cfg, 2);
  Tape tape;
  EXPECT_THROW(multiscale_conv(tape, ps, tape.constant(Tensor({8, 4})), cfg.kernels), ParameterError);
}

TEST(Msff, ZeroInputAndBiasesGiveZeros) {
  CtcmConfig cfg;
  cfg.kernels = {1, 2, 4};
  cfg.msff_hidden = 5;
  ParameterSet ps = make_params(6, cfg, 3);
  Tape tape(false);
  const Tensor out = msff(tape, ps, tape.constant(Tensor({6, 3, 9}))).value();
  ASSERT_EQ(out.shape(), (Shape{3, 1, 9}));
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], 0.0);
}

TEST(Msff, PaperScaleShape) {
  CtcmConfig cfg;
  cfg.msff_hidden = 96;
  ParameterSet ps = make_params(320, cfg, 4);
  Gen g(4);
  Tape tape(false);
  EXPECT_EQ(msff(tape, ps, tape.constant(g.tensor({320, 8, 48}))).shape(), (Shape{160, 1, 48}));
}

TEST(CtcmForward, ZeroParametersGiveZeros) {
  CtcmConfig cfg;
  cfg.kernels = {1, 3};
  cfg.msff_hidden = 4;
  ParameterSet ps = make_params(8, cfg, 5);
  zero_all(ps);
  Gen g(5);
  Tape tape(false);
  const Tensor h = ctcm_forward(tape, ps, cfg, tape.constant(g.tensor({10, 8}))).value();
  ASSERT_EQ(h.shape(), (Shape{10, 4}));
  for (std::size_t i = 0; i < h.size(); ++i) EXPECT_EQ(h[i], 0.0);
}

TEST(CtcmForward, PaperScaleShape) {
  CtcmConfig cfg;
  cfg.kernels = {1, 2, 4, 8, 16, 32, 64, 128};
  ParameterSet ps = make_params(320, cfg, 6);
  Gen g(6);
  Tape tape(false);
  EXPECT_EQ(ctcm_forward(tape, ps, cfg, tape.constant(g.tensor({128, 320}))).shape(), (Shape{128, 160}));
}

TEST(CtcmConfig, KernelsMustIncrease) {
  CtcmConfig cfg;
  cfg.kernels = {2, 2};
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg.kernels = {};
  EXPECT_THROW(cfg.validate(), ParameterError);
}

TEST(Fuse, IdentityWeightConcatenates) {
  ParameterSet ps = make_params(4, {}, 7);
  Tensor& w = ps.get("fusion.weight").value;
  w.fill(0.0);
  for (std::size_t i = 0; i < 4; ++i) w(i, i) = 1.0;
  Gen g(7);
  const Tensor a = g.tensor({5, 2}), b = g.tensor({5, 2});
  Tape tape(false);
  const Tensor h = fuse(tape, ps, tape.constant(a), tape.constant(b)).value();
  ASSERT_EQ(h.shape(), (Shape{5, 4}));
  for (std::size_t t = 0; t < 5; ++t) {
    EXPECT_EQ(h(t, 0), a(t, 0));
    EXPECT_EQ(h(t, 1), a(t, 1));
    EXPECT_EQ(h(t, 2), b(t, 0));
    EXPECT_EQ(h(t, 3), b(t, 1));
  }
}

TEST(Fuse, PaperScaleShape) {
  ParameterSet ps = make_params(320, {}, 8);
  Tape tape(false);
  EXPECT_EQ(fuse(tape, ps, tape.constant(Tensor({48, 160})), tape.constant(Tensor({48, 160}))).shape(),
            (Shape{48, 320}));
  EXPECT_THROW(fuse(tape, ps, tape.constant(Tensor({48, 160})), tape.constant(Tensor({47, 160}))), ContractError);
}

TEST(TimeLoss, SingleStepIsZero) {
  Gen g(9);
  Tape tape(false);
  EXPECT_EQ(time_contrastive_loss(tape.constant(g.tensor({1, 4})), tape.constant(g.tensor({1, 4}))).value()[0], 0.0);
}

TEST(TimeLoss, ThreeStepHandSetCaseMatchesBruteForce) {
  // r = I3, so r_t . h_t' = h(t', t): the dot matrix is h transposed.
  const Tensor r = Tensor::identity(3);
  const Tensor h = Tensor::matrix({{0.5, -1.0, 2.0}, {1.5, 0.0, -0.5}, {-2.0, 1.0, 0.25}});
  Tape tape(false);
  const double got = time_contrastive_loss(tape.constant(r), tape.constant(h)).value()[0];
  double want = 0.0;
  for (std::size_t t = 0; t < 3; ++t) {
    double pos = std::exp(h(t, t)), neg = 0.0;
    for (std::size_t u = 0; u < 3; ++u)
      if (u != t) neg += std::exp(h(u, t));
    want += -std::log(pos / (pos + neg));
  }
  EXPECT_NEAR(got, want, 1e-12);
}

TEST(TimeLoss, ShapeMismatchIsContractError) {
  Tape tape;
  EXPECT_THROW(time_contrastive_loss(tape.constant(Tensor({3, 2})), tape.constant(Tensor({3, 4}))), ContractError);
}

class CtcmProperties : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(CtcmProperties, LossIsNonNegativeAndPermutationSymmetric) {
  Gen g(GetParam());
  const std::size_t T = g.size(2, 12), K = g.size(1, 5);
  Tensor r = g.tensor({T, K}), h = g.tensor({T, K});
  Tape tape(false);
  const double base = time_contrastive_loss(tape.constant(r), tape.constant(h)).value()[0];
  EXPECT_GE(base, 0.0);
  const std::size_t a = g.size(0, T - 1), b = g.size(0, T - 1);
  for (std::size_t k = 0; k < K; ++k) {
    std::swap(r(a, k), r(b, k));
    std::swap(h(a, k), h(b, k));
  }
  EXPECT_NEAR(time_contrastive_loss(tape.constant(r), tape.constant(h)).value()[0], base, 1e-12);
}

TEST_P(CtcmProperties, KernelRemovalKeepsShapes) {
  Gen g(GetParam() + 20);
  std::vector<std::size_t> kernels{1, 2, 4, 8};
  kernels.erase(kernels.begin() + static_cast<long>(g.size(0, kernels.size() - 1)));
  CtcmConfig cfg;
  cfg.kernels = kernels;
  cfg.msff_hidden = g.size(1, 6);
  const std::size_t K = 2 * g.size(1, 3), T = g.size(8, 20);
  ParameterSet ps = make_params(K, cfg, GetParam());
  Tape tape(false);
  Var r = tape.constant(g.tensor({T, K}));
  EXPECT_EQ(multiscale_conv(tape, ps, r, kernels).shape(), (Shape{K, kernels.size(), T}));
  EXPECT_EQ(ctcm_forward(tape, ps, cfg, r).shape(), (Shape{T, K / 2}));
}

TEST_P(CtcmProperties, GradientsMatchFiniteDifferences) {
  Gen g(GetParam() + 40);
  CtcmConfig cfg;
  cfg.kernels = {1, 2, 4};
  cfg.msff_hidden = 3;
  const std::size_t K = 4, T = 8;
  ParameterSet ps = make_params(K, cfg, GetParam());
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (ps[i].name.find("bias") != std::string::npos) ps[i].value = g.tensor(ps[i].value.shape(), 0.3);
  const Tensor r = g.tensor({T, K}), hhat = g.tensor({T, K / 2});
  auto loss = [&](Tape& t) {
    Var rv = t.constant(r);
    return time_contrastive_loss(rv, fuse(t, ps, ctcm_forward(t, ps, cfg, rv), t.constant(hhat)));
  };
  EXPECT_LT(finite_diff_check(loss, ps), 1e-5);
}

INSTANTIATE_TEST_SUITE_P(Random, CtcmProperties, ::testing::Range<std::uint64_t>(1, 6));

}  // namespace
}  // namespace mff::ctcm
