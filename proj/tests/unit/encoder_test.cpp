#include <gtest/gtest.h>

#include "mff/encoder.hpp"
#include "mff/gradcheck.hpp"
#include "support.hpp"

namespace mff::encoder {
namespace {

using testing::Gen;

BackboneConfig small(std::size_t D = 2) {
  BackboneConfig c;
  c.input_dim = D;
  c.hidden_dim = 6;
  c.output_dim = 8;
  c.num_blocks = 3;
  return c;
}

Tensor encode_value(ParameterSet& ps, const BackboneConfig& cfg, const Tensor& x, ForwardMode mode = {}) {
  Tape tape(false);
  return encode(tape, ps, cfg, tape.constant(x), mode).value();
}

TEST(Encode, ZeroParametersGiveZeroOutput) {
  const BackboneConfig cfg = small();
  ParameterSet ps = make_backbone(cfg, 1);
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i].value.fill(0.0);
  Gen g(1);
  const Tensor r = encode_value(ps, cfg, g.tensor({10, 2}));
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(r[i], 0.0);
}

TEST(Encode, PaperScaleShape) {
  BackboneConfig cfg;
  cfg.input_dim = 7;
  ParameterSet ps = make_backbone(cfg, 2);
  Gen g(2);
  EXPECT_EQ(encode_value(ps, cfg, g.tensor({48, 7})).shape(), (Shape{48, 320}));
}

TEST(Encode, WrongInputWidthIsDimensionError) {
  const BackboneConfig cfg = small(3);
  ParameterSet ps = make_backbone(cfg, 1);
  Tape tape;
  EXPECT_THROW(encode(tape, ps, cfg, tape.constant(Tensor({5, 2})), {}), DimensionError);
}

TEST(MakeBackbone, ParameterCountMatchesClosedFormAndEnumeration) {
  BackboneConfig cfg;
  cfg.input_dim = 7;
  cfg.hidden_dim = 32;
  cfg.output_dim = 320;
  cfg.num_blocks = 8;
  const ParameterSet ps = make_backbone(cfg, 3);
  // input 7*32+32, 8 blocks of two 3x32x32 convs with biases, 1x32x320 projection + bias.
  const std::size_t formula = (7 * 32 + 32) + 8 * 2 * (3 * 32 * 32 + 32) + (32 * 320 + 320);
  EXPECT_EQ(backbone_parameter_count(cfg), formula);
  EXPECT_EQ(ps.scalar_count(), formula);
}

TEST(MakeBackbone, SeedDeterminesInit) {
  const BackboneConfig cfg = small();
  const ParameterSet a = make_backbone(cfg, 5), b = make_backbone(cfg, 5), c = make_backbone(cfg, 6);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].value, b[i].value);
    differs = differs || a[i].value != c[i].value;
  }
  EXPECT_TRUE(differs);
}

TEST(MakeBackbone, InvalidConfigThrows) {
  BackboneConfig cfg = small();
  cfg.output_dim = 7;
  EXPECT_THROW(make_backbone(cfg, 1), ParameterError);
}

TEST(Encode, DropoutOnlyInTraining) {
  BackboneConfig cfg = small();
  cfg.dropout_rate = 0.5;
  ParameterSet ps = make_backbone(cfg, 1);
  Gen g(3);
  const Tensor x = g.tensor({12, 2});
  const Tensor eval = encode_value(ps, cfg, x);
  EXPECT_EQ(eval, encode_value(ps, cfg, x, {false, 9}));
  EXPECT_NE(eval, encode_value(ps, cfg, x, {true, 9}));
  EXPECT_EQ(encode_value(ps, cfg, x, {true, 9}), encode_value(ps, cfg, x, {true, 9}));
}

class EncoderProperties : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(EncoderProperties, CausalWithinReceptiveField) {
  Gen g(GetParam());
  BackboneConfig cfg = small(g.size(1, 3));
  cfg.num_blocks = g.size(1, 3);
  cfg.activation = g.coin() ? Activation::silu : Activation::gelu;
  ParameterSet ps = make_backbone(cfg, GetParam());
  const std::size_t T = g.size(4, 40);
  Tensor x = g.tensor({T, cfg.input_dim});
  const Tensor before = encode_value(ps, cfg, x);
  const std::size_t t0 = g.size(0, T - 1);
  x(t0, 0) += 1.0;
  const Tensor after = encode_value(ps, cfg, x);
  const std::size_t R = receptive_field(cfg);
  for (std::size_t t = 0; t < T; ++t) {
    const bool reachable = t >= t0 && t - t0 < R;
    for (std::size_t k = 0; k < cfg.output_dim; ++k)
      if (!reachable) {
        EXPECT_EQ(before(t, k), after(t, k)) << "t=" << t << " t0=" << t0;
      }
  }
}

TEST_P(EncoderProperties, GradientsMatchFiniteDifferences) {
  Gen g(GetParam() + 50);
  BackboneConfig cfg = small(2);
  cfg.num_blocks = 2;
  cfg.activation = g.coin() ? Activation::silu : Activation::gelu;
  ParameterSet ps = make_backbone(cfg, GetParam());
  const Tensor x = g.tensor({9, 2});
  const Tensor w = g.tensor({9, cfg.output_dim});
  auto loss = [&](Tape& t) { return sum(mul(encode(t, ps, cfg, t.constant(x), {true, 4}), t.constant(w))); };
  EXPECT_LT(finite_diff_check(loss, ps), 1e-5);
}

INSTANTIATE_TEST_SUITE_P(Random, EncoderProperties, ::testing::Range<std::uint64_t>(1, 6));

}  // namespace
}  // namespace mff::encoder
