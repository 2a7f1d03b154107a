#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "companion/data.hpp"

using namespace companion;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.num_classes = 4;
  s.input_dim = 5;
  s.samples_per_class = 30;
  s.test_samples_per_class = 10;
  return s;
}

std::string be32(std::uint32_t v) {
  return {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8), static_cast<char>(v)};
}

}  // namespace

TEST(Synthetic, DeterministicShapesAndInterleaving) {
  const auto a = generate_clusters(small_spec(), 3), b = generate_clusters(small_spec(), 3);
  EXPECT_TRUE(a.train == b.train);
  EXPECT_TRUE(a.test == b.test);
  EXPECT_FALSE(a.train == generate_clusters(small_spec(), 4).train);
  EXPECT_EQ(a.train.size(), 120u);
  EXPECT_EQ(a.test.size(), 40u);
  EXPECT_EQ(a.train.input_dim(), 5u);
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train.labels[i], i % 4);
  a.train.validate();
}

TEST(Synthetic, MeansLieOnSphere) {
  SyntheticSpec s = small_spec();
  s.cluster_mean_scale = 2.5;
  for (const auto& m : generate_clusters(s, 0).means) {
    double n = 0;
    for (double v : m) n += v * v;
    EXPECT_NEAR(std::sqrt(n), 2.5, 1e-12);
  }
}

TEST(Synthetic, ZeroNoiseIsPerfectlySeparable) {
  SyntheticSpec s = small_spec();
  s.noise_sigma = 0.0;
  const auto d = generate_clusters(s, 1);
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    std::size_t best = 0;
    double best_dist = INFINITY;
    for (std::size_t c = 0; c < d.means.size(); ++c) {
      double dist = 0;
      for (std::size_t j = 0; j < s.input_dim; ++j) dist += std::pow(d.test.features(i, j) - d.means[c][j], 2);
      if (dist < best_dist) {
        best_dist = dist;
        best = c;
      }
    }
    EXPECT_EQ(best, d.test.labels[i]);
  }
}

TEST(Synthetic, LabelNoiseRate) {
  SyntheticSpec s;
  s.num_classes = 8;
  s.input_dim = 2;
  s.samples_per_class = 1000;
  s.label_noise_rate = 0.2;
  const auto d = generate_clusters(s, 2);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < d.train.size(); ++i) changed += d.train.labels[i] != d.clean_train_labels[i];
  const double n = static_cast<double>(d.train.size());
  const double p = 0.2 * 7.0 / 8.0;
  EXPECT_NEAR(static_cast<double>(changed) / n, p, 3 * std::sqrt(p * (1 - p) / n));
  // Test labels are never corrupted.
  for (std::size_t i = 0; i < d.test.size(); ++i) EXPECT_EQ(d.test.labels[i], i % 8);
}

TEST(Synthetic, RejectsBadSpec) {
  SyntheticSpec s = small_spec();
  s.label_noise_rate = 1.0;
  EXPECT_THROW(generate_clusters(s, 0), InputError);
  s = small_spec();
  s.num_classes = 1;
  EXPECT_THROW(generate_clusters(s, 0), InputError);
}

TEST(Csv, ParsesRows) {
  std::istringstream is("label,f0,f1\n1,0.5,-2\r\n0,3,4e-1\n\n");
  const auto d = parse_csv(is);
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.num_classes, 2u);
  EXPECT_EQ(d.labels, (std::vector<std::size_t>{1, 0}));
  EXPECT_TRUE(d.features.same_values(Tensor::matrix({{0.5, -2}, {3, 0.4}})));
}

TEST(Csv, ParseErrorsCarryLineNumber) {
  std::istringstream bad_value("label,f0\n0,1\n1,abc\n");
  try {
    parse_csv(bad_value);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  std::istringstream ragged("label,f0,f1\n0,1\n");
  try {
    parse_csv(ragged);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  std::istringstream neg("label,f0\n-1,1\n");
  EXPECT_THROW(parse_csv(neg), ParseError);
  std::istringstream header("y,f0\n0,1\n");
  EXPECT_THROW(parse_csv(header), ParseError);
  std::istringstream empty("label,f0\n");
  EXPECT_THROW(parse_csv(empty), InputError);
}

TEST(Csv, BitExactRoundTrip) {
  const auto d = generate_clusters(small_spec(), 5).train;
  std::stringstream ss;
  write_csv(ss, d);
  const auto back = parse_csv(ss);
  EXPECT_TRUE(back == d);
  std::stringstream again;
  write_csv(again, back);
  std::stringstream first;
  write_csv(first, d);
  EXPECT_EQ(again.str(), first.str());
}

TEST(Idx, ParsesAndNormalizes) {
  std::istringstream images(be32(0x803) + be32(2) + be32(1) + be32(2) + std::string("\x00\xff\x00\xff", 4));
  std::istringstream labels(be32(0x801) + be32(2) + std::string("\x01\x00", 2));
  const auto d = parse_idx(images, labels, true);
  EXPECT_TRUE(d.features.same_values(Tensor::matrix({{0, 1}, {0, 1}})));
  EXPECT_EQ(d.labels, (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(d.num_classes, 2u);
}

TEST(Idx, BigEndianCountsAndErrors) {
  std::string px(300, '\x07');
  std::string lb(300, '\x02');
  std::istringstream images(be32(0x803) + be32(300) + be32(1) + be32(1) + px);
  std::istringstream labels(be32(0x801) + be32(300) + lb);
  const auto d = parse_idx(images, labels, false);
  EXPECT_EQ(d.size(), 300u);
  EXPECT_EQ(d.features(299, 0), 7.0);
  EXPECT_EQ(d.num_classes, 3u);

  std::istringstream im2(be32(0x803) + be32(2) + be32(1) + be32(1) + std::string(2, '\0'));
  std::istringstream lb2(be32(0x801) + be32(3) + std::string(3, '\0'));
  EXPECT_THROW(parse_idx(im2, lb2, false), FormatError);

  std::istringstream im3(be32(0x801));
  std::istringstream lb3(be32(0x801));
  EXPECT_THROW(parse_idx(im3, lb3, false), FormatError);

  std::istringstream im4(be32(0x803) + be32(2) + be32(1) + be32(1) + std::string(1, '\0'));
  std::istringstream lb4(be32(0x801) + be32(2) + std::string(2, '\0'));
  EXPECT_THROW(parse_idx(im4, lb4, false), FormatError);
}

TEST(Batching, PermutationPerEpoch) {
  const auto b = epoch_batches(10, 3, 0, 0);
  ASSERT_EQ(b.size(), 4u);
  EXPECT_EQ(b.back().size(), 1u);
  std::multiset<std::size_t> seen;
  for (const auto& batch : b) seen.insert(batch.begin(), batch.end());
  std::multiset<std::size_t> all;
  for (std::size_t i = 0; i < 10; ++i) all.insert(i);
  EXPECT_EQ(seen, all);
  EXPECT_EQ(b, epoch_batches(10, 3, 0, 0));
  EXPECT_NE(b, epoch_batches(10, 3, 0, 1));
  EXPECT_NE(b, epoch_batches(10, 3, 1, 0));
  EXPECT_EQ(batches_per_epoch(10, 3), 4u);
  EXPECT_EQ(batches_per_epoch(9, 3), 3u);
  EXPECT_THROW(epoch_batches(10, 0, 0, 0), InputError);
}

TEST(Gather, SelectsRows) {
  const auto d = generate_clusters(small_spec(), 0).train;
  const std::vector<std::size_t> idx{5, 2};
  const auto [x, y] = gather(d, idx);
  EXPECT_EQ(y, (std::vector<std::size_t>{d.labels[5], d.labels[2]}));
  for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(x(0, j), d.features(5, j));
}
