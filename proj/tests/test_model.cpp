#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "companion/model.hpp"
#include "test_support.hpp"

using namespace companion;

TEST(InitParams, DeterministicWithZeroBiases) {
  const MlpSpec spec{5, {7, 3}, 4};
  const ParamSet a = init_params(spec, 9), b = init_params(spec, 9);
  EXPECT_TRUE(a.bit_equal(b));
  EXPECT_FALSE(a.bit_equal(init_params(spec, 10)));
  for (const auto& bias : a.biases)
    for (double v : bias.data()) EXPECT_EQ(std::bit_cast<std::uint64_t>(v), 0u);
  ASSERT_EQ(a.weights.size(), 3u);
  EXPECT_EQ(a.weights[0].shape(), (Shape{7, 5}));
  EXPECT_EQ(a.weights[1].shape(), (Shape{3, 7}));
  EXPECT_EQ(a.weights[2].shape(), (Shape{4, 3}));
  EXPECT_EQ(a.biases[2].shape(), (Shape{4}));
}

TEST(InitParams, HeStandardDeviation) {
  const ParamSet p = init_params(MlpSpec{256, {}, 256}, 1);
  const auto w = p.weights[0].data();
  double s = 0, s2 = 0;
  for (double v : w) {
    s += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(w.size());
  const double sd = std::sqrt(s2 / n - (s / n) * (s / n));
  const double expected = std::sqrt(2.0 / 256.0);
  EXPECT_NEAR(sd, expected, 0.15 * expected);
}

TEST(InitParams, RejectsBadSpecs) {
  EXPECT_THROW(init_params(MlpSpec{0, {}, 2}, 0), InputError);
  EXPECT_THROW(init_params(MlpSpec{2, {0}, 2}, 0), InputError);
  EXPECT_THROW(init_params(MlpSpec{2, {}, 1}, 0), InputError);
}

TEST(Forward, ZeroParamsGiveZeroLogits) {
  ParamSet p = init_params(MlpSpec{3, {4}, 2}, 0);
  for (auto& w : p.weights)
    for (double& v : w.data()) v = 0.0;
  const Tensor out = forward(p, Tensor::matrix({{1, 2, 3}, {-1, 0, 5}}));
  EXPECT_TRUE(out.same_values(Tensor::zeros({2, 2})));
}

TEST(Forward, IdentityPassthrough) {
  ParamSet p = init_params(MlpSpec{3, {}, 3}, 0);
  p.weights[0] = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  const Tensor x = Tensor::matrix({{0.5, -2, 7}, {1, 1, 1}});
  EXPECT_TRUE(forward(p, x).same_values(x));
}

TEST(Forward, HandEvaluatedTinyNet) {
  // h = relu(2 * 1 - 0.5) = 1.5; logits = [1.5 * 1.5 + 0.1, 1.5 * -1 + 0.2]
  ParamSet p = init_params(MlpSpec{1, {1}, 2}, 0);
  p.weights[0] = Tensor::matrix({{2.0}});
  p.biases[0] = Tensor::vector({-0.5});
  p.weights[1] = Tensor::matrix({{1.5}, {-1.0}});
  p.biases[1] = Tensor::vector({0.1, 0.2});
  const Tensor out = forward(p, Tensor::matrix({{1.0}}));
  EXPECT_DOUBLE_EQ(out[0], 2.35);
  EXPECT_DOUBLE_EQ(out[1], -1.3);

  // Negative pre-activation: hidden unit is off, logits are the output bias.
  const Tensor off = forward(p, Tensor::matrix({{-1.0}}));
  EXPECT_DOUBLE_EQ(off[0], 0.1);
  EXPECT_DOUBLE_EQ(off[1], 0.2);
}

TEST(Forward, ShapeMismatchThrows) {
  const ParamSet p = init_params(MlpSpec{3, {2}, 2}, 0);
  EXPECT_THROW(forward(p, Tensor::zeros({2, 4})), ShapeError);
}

TEST(Forward, DeterministicAndSameOnOrOffTape) {
  auto rng = rng_stream(0, "fwd");
  const ParamSet p = init_params(MlpSpec{4, {8, 8}, 3}, 2);
  const Tensor x = companion::testing::random_matrix(rng, 6, 4);
  const Tensor a = forward(p, x);
  EXPECT_TRUE(a.same_values(forward(p, x)));
  Tape tape;
  TapeScope scope(tape);
  const Tensor on_tape = forward(watch_params(tape, p), x);
  EXPECT_TRUE(on_tape.tracked());
  EXPECT_TRUE(on_tape.same_values(a));
}

TEST(CloneParams, IndependentDeepCopy) {
  ParamSet orig = init_params(MlpSpec{3, {4}, 2}, 5);
  const ParamSet c = clone_params(orig);
  EXPECT_TRUE(c.bit_equal(orig));
  EXPECT_TRUE(clone_params(c).bit_equal(orig));
  const Tensor x = Tensor::matrix({{1, 2, 3}});
  EXPECT_TRUE(forward(c, x).same_values(forward(orig, x)));
  orig.weights[0][0] += 1.0;
  EXPECT_FALSE(c.bit_equal(orig));
  EXPECT_TRUE(c.bit_equal(init_params(MlpSpec{3, {4}, 2}, 5)));
}

TEST(Checkpoint, BitExactRoundTrip) {
  ParamSet p = init_params(MlpSpec{3, {5, 4}, 3}, 8);
  p.biases[0][1] = -0.0;
  p.weights[1][2] = 1e-310;  // subnormal
  std::stringstream ss;
  write_checkpoint(ss, p);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, bytes.find('\n')), "mlp 3 5 4 3");
  EXPECT_EQ(bytes.size(), std::string("mlp 3 5 4 3\n").size() + 8 * p.num_scalars());
  const ParamSet q = read_checkpoint(ss);
  EXPECT_TRUE(q.bit_equal(p));
}

TEST(Checkpoint, LittleEndianPayload) {
  ParamSet p = init_params(MlpSpec{1, {}, 2}, 0);
  p.weights[0] = Tensor::matrix({{1.0}, {0.0}});
  std::stringstream ss;
  write_checkpoint(ss, p);
  const std::string bytes = ss.str();
  const std::size_t off = bytes.find('\n') + 1;
  // 1.0 = 0x3FF0000000000000, least significant byte first
  EXPECT_EQ(static_cast<unsigned char>(bytes[off + 6]), 0xF0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[off + 7]), 0x3F);
}

TEST(Checkpoint, RejectsMalformedInput) {
  std::stringstream bad_magic("nope 1 2\n");
  EXPECT_THROW(read_checkpoint(bad_magic), FormatError);
  std::stringstream short_payload("mlp 1 2\nabc");
  EXPECT_THROW(read_checkpoint(short_payload), FormatError);
}
