#include <gtest/gtest.h>

#include <cmath>

#include "companion/metrics.hpp"
#include "test_support.hpp"

using namespace companion;

TEST(TopNonTarget, TrivialExamples) {
  const std::vector<double> a{3, 1, 2};
  EXPECT_EQ(top_nontarget_class(a, 0), 2u);
  EXPECT_EQ(top_nontarget_class(a, 2), 0u);
  const std::vector<double> tie{0, 5, 5};
  EXPECT_EQ(top_nontarget_class(tie, 0), 1u);
  const std::vector<double> flat{1, 1, 1, 1};
  EXPECT_EQ(top_nontarget_class(flat, 0), 1u);
  EXPECT_EQ(top_nontarget_class(flat, 2), 0u);
  EXPECT_THROW(top_nontarget_class(a, 3), InputError);
}

TEST(TopNonTarget, ReferenceExamples) {
  const std::vector<double> a{3, 5, 2};
  EXPECT_EQ(top_nontarget_class(a, 1), 0u);
  EXPECT_EQ(top_nontarget_class(a, 0), 1u);
  const std::vector<double> tie{1, 1, 0};
  EXPECT_EQ(top_nontarget_class(tie, 2), 0u);
}

TEST(Argmax, LowestIndexOnTies) {
  const std::vector<double> v{1, 4, 4, 2};
  EXPECT_EQ(argmax(v), 1u);
}

TEST(Histogram, CountsPerClass) {
  const Tensor logits = Tensor::matrix({{5, 1, 2}, {5, 3, 2}, {0, 9, 1}});
  const std::vector<std::size_t> y{0, 0, 1};
  const auto h = nontarget_histogram(logits, y);
  EXPECT_EQ(h.count(0, 2), 1u);
  EXPECT_EQ(h.count(0, 1), 1u);
  EXPECT_EQ(h.count(1, 2), 1u);
  EXPECT_EQ(h.total(0), 2u);
  EXPECT_EQ(h.total(2), 0u);
  EXPECT_THROW(h.count(3, 0), std::out_of_range);
}

TEST(Consistency, KnownValues) {
  NonTargetHistogram h(5);
  for (int i = 0; i < 3; ++i) h.add(0, 1);
  h.add(0, 2);
  EXPECT_DOUBLE_EQ(class_consistency(h, 0), 0.75);
  h.add(1, 4);
  EXPECT_DOUBLE_EQ(class_consistency(h, 1), 1.0);
  for (std::size_t k = 0; k < 4; ++k) h.add(4, k);
  EXPECT_DOUBLE_EQ(class_consistency(h, 4), 0.25);
  EXPECT_THROW(class_consistency(h, 2), UndefinedClassError);
}

TEST(Perplexity, KnownValues) {
  NonTargetHistogram h(4);
  h.add(0, 1);
  h.add(0, 1);
  EXPECT_DOUBLE_EQ(class_perplexity(h, 0), 1.0);
  h.add(1, 0);
  h.add(1, 2);
  EXPECT_NEAR(class_perplexity(h, 1), 2.0, 1e-15);
  // p = {0.6, 0.3, 0.1}
  for (int i = 0; i < 6; ++i) h.add(3, 0);
  for (int i = 0; i < 3; ++i) h.add(3, 1);
  h.add(3, 2);
  EXPECT_NEAR(class_perplexity(h, 3), 2.4545555958911476, 1e-14);
  EXPECT_THROW(class_perplexity(h, 2), UndefinedClassError);
}

TEST(Means, SkipEmptyClassesAndNanWhenAllEmpty) {
  NonTargetHistogram h(3);
  EXPECT_TRUE(std::isnan(mean_consistency(h)));
  EXPECT_TRUE(std::isnan(mean_perplexity(h)));
  h.add(0, 1);
  h.add(2, 0);
  h.add(2, 1);
  EXPECT_DOUBLE_EQ(mean_consistency(h), 0.75);
  EXPECT_NEAR(mean_perplexity(h), 1.5, 1e-15);
}

TEST(Bounds, RandomHistograms) {
  auto rng = rng_stream(1, "hist-bounds");
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t K = 2 + rng.below(9);
    NonTargetHistogram h(K);
    const std::size_t n = 1 + rng.below(50);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = rng.below(K);
      std::size_t k = rng.below(K - 1);
      if (k >= c) ++k;
      h.add(c, k);
    }
    for (std::size_t c = 0; c < K; ++c) {
      if (h.total(c) == 0) continue;
      const double cons = class_consistency(h, c), ppl = class_perplexity(h, c);
      EXPECT_GE(cons, 1.0 / static_cast<double>(K - 1) - 1e-12);
      EXPECT_LE(cons, 1.0);
      EXPECT_GE(ppl, 1.0 - 1e-12);
      EXPECT_LE(ppl, static_cast<double>(K - 1) + 1e-9);
    }
  }
}

TEST(Histogram, InvariantUnderMonotoneRowTransforms) {
  auto rng = rng_stream(2, "softmax-inv");
  const Tensor logits = companion::testing::random_matrix(rng, 30, 5);
  const auto y = companion::testing::random_labels(rng, 30, 5);
  Tensor shifted = logits;
  for (std::size_t i = 0; i < 30; ++i)
    for (std::size_t k = 0; k < 5; ++k) shifted(i, k) = 2.0 * logits(i, k) + static_cast<double>(i);
  EXPECT_EQ(nontarget_histogram(logits, y), nontarget_histogram(shifted, y));
  EXPECT_EQ(nontarget_histogram(logits, y), nontarget_histogram(softmax_values(logits), y));
}

TEST(LogitVariation, KnownValue) {
  const Tensor a = Tensor::matrix({{0, 0}, {1, 1}});
  const Tensor b = Tensor::matrix({{3, 4}, {7, 9}});
  EXPECT_DOUBLE_EQ(logit_variation(a, b), 7.5);
  EXPECT_DOUBLE_EQ(logit_variation(Tensor::matrix({{0, 0}}), Tensor::matrix({{3, 4}})), 5.0);
  EXPECT_EQ(logit_variation(a, a), 0.0);
  EXPECT_THROW(logit_variation(a, Tensor::zeros({2, 3})), ShapeError);
}

TEST(Accuracy, Cases) {
  const Tensor logits = Tensor::matrix({{1, 0}, {0, 1}, {2, 2}, {0, 3}});
  EXPECT_DOUBLE_EQ(accuracy(logits, std::vector<std::size_t>{0, 1, 0, 0}), 0.75);
  EXPECT_DOUBLE_EQ(accuracy(logits, std::vector<std::size_t>{1, 0, 1, 0}), 0.0);
  EXPECT_THROW(accuracy(logits, std::vector<std::size_t>{0, 1}), ShapeError);
  EXPECT_EQ(accuracy(Tensor::matrix({{1, 0, 0}, {0, 0, 1}}), std::vector<std::size_t>{0, 2}), 1.0);
  EXPECT_EQ(accuracy(Tensor::zeros({4, 3}), std::vector<std::size_t>{0, 0, 0, 0}), 1.0);
  EXPECT_EQ(accuracy(Tensor::zeros({4, 3}), std::vector<std::size_t>{1, 1, 1, 1}), 0.0);
}
