#include <gtest/gtest.h>

#include <cmath>

#include "companion/objectives.hpp"
#include "test_support.hpp"

using namespace companion;
using companion::testing::random_labels;
using companion::testing::random_matrix;

namespace {

const DistanceKind kAllKinds[] = {DistanceKind::mse(), DistanceKind::kl(), DistanceKind::l1(), DistanceKind::infonce()};

// Independent softmax evaluation without the log-sum-exp path.
std::vector<double> softmax_row(std::span<const double> r) {
  double mx = r[0];
  for (double v : r) mx = std::max(mx, v);
  std::vector<double> p(r.size());
  double s = 0;
  for (std::size_t k = 0; k < r.size(); ++k) s += (p[k] = std::exp(r[k] - mx));
  for (double& v : p) v /= s;
  return p;
}

}  // namespace

TEST(CrossEntropy, KnownValues) {
  const std::vector<std::size_t> y0{0};
  EXPECT_NEAR(cross_entropy(Tensor::matrix({{0, 0}}), y0).item(), std::log(2.0), 1e-15);
  EXPECT_LT(cross_entropy(Tensor::matrix({{100, 0}}), y0).item(), 1e-10);
}

TEST(CrossEntropy, MatchesDirectSoftmax) {
  auto rng = rng_stream(1, "ce");
  const Tensor logits = random_matrix(rng, 4, 3, 2.0);
  const auto y = random_labels(rng, 4, 3);
  double expected = 0;
  for (std::size_t i = 0; i < 4; ++i) expected -= std::log(softmax_row(logits.row(i))[y[i]]);
  expected /= 4;
  EXPECT_NEAR(cross_entropy(logits, y).item(), expected, 1e-12);
}

TEST(CrossEntropy, LabelOutOfRange) {
  const std::vector<std::size_t> y{2};
  EXPECT_THROW(cross_entropy(Tensor::matrix({{0, 0}}), y), InputError);
}

TEST(Distance, IdentityCases) {
  const Tensor a = Tensor::matrix({{1, -2, 0.5}, {0.1, 3, -1}});
  for (const auto& k : {DistanceKind::mse(), DistanceKind::kl(), DistanceKind::l1()})
    EXPECT_EQ(distance(k, a, a).item(), 0.0) << to_string(k.kind);
  const Tensor one = Tensor::matrix({{1, -2, 0.5}});
  EXPECT_NEAR(distance(DistanceKind::infonce(), one, one).item(), 0.0, 1e-15);
}

TEST(Distance, MseHalfSquaredNorm) {
  EXPECT_DOUBLE_EQ(distance(DistanceKind::mse(), Tensor::matrix({{2, 0}}), Tensor::matrix({{0, 0}})).item(), 2.0);
}

TEST(Distance, L1NormalizedByClasses) {
  // (|1| + |-3|) / 2 for row 0, (0 + 2) / 2 for row 1, mean over rows
  const double d = distance(DistanceKind::l1(), Tensor::matrix({{1, -3}, {0, 2}}), Tensor::zeros({2, 2})).item();
  EXPECT_DOUBLE_EQ(d, 1.5);
}

TEST(Distance, KlMatchesProbabilitySpaceOracle) {
  auto rng = rng_stream(2, "kl");
  const Tensor pred = random_matrix(rng, 2, 4, 2.0), target = random_matrix(rng, 2, 4, 2.0);
  double expected = 0;
  for (std::size_t i = 0; i < 2; ++i) {
    const auto pt = softmax_row(target.row(i)), ps = softmax_row(pred.row(i));
    for (std::size_t k = 0; k < 4; ++k) expected += pt[k] * (std::log(pt[k]) - std::log(ps[k]));
  }
  expected /= 2;
  EXPECT_NEAR(distance(DistanceKind::kl(), pred, target).item(), expected, 1e-12);
}

TEST(Distance, InfoNceMatchesDirectFormula) {
  auto rng = rng_stream(3, "nce");
  const Tensor pred = random_matrix(rng, 3, 4), target = random_matrix(rng, 3, 4);
  const double tau = 0.25;
  auto cosine = [](std::span<const double> a, std::span<const double> b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      ab += a[k] * b[k];
      aa += a[k] * a[k];
      bb += b[k] * b[k];
    }
    return ab / std::sqrt(aa * bb);
  };
  double expected = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    double denom = 0;
    for (std::size_t j = 0; j < 3; ++j) denom += std::exp(cosine(pred.row(i), target.row(j)) / tau);
    expected -= std::log(std::exp(cosine(pred.row(i), target.row(i)) / tau) / denom);
  }
  expected /= 3;
  EXPECT_NEAR(distance(DistanceKind::infonce(tau), pred, target).item(), expected, 1e-12);
}

TEST(Distance, Errors) {
  EXPECT_THROW(distance(DistanceKind::mse(), Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeError);
  EXPECT_THROW(distance(DistanceKind::infonce(), Tensor::matrix({{0, 0}, {1, 1}}), Tensor::matrix({{1, 0}, {1, 1}})),
               InputError);
  EXPECT_THROW(DistanceKind::infonce(0.0), InputError);
  EXPECT_THROW(parse_distance("cosine"), InputError);
  EXPECT_EQ(parse_distance("infonce", 0.5).tau, 0.5);
}

TEST(Distance, PropertiesOnRandomInputs) {
  auto rng = rng_stream(4, "dist-props");
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 1 + rng.below(5), k = 2 + rng.below(5);
    const Tensor p = random_matrix(rng, b, k, 3.0), t = random_matrix(rng, b, k, 3.0);
    for (const auto& kind : kAllKinds) EXPECT_GE(distance(kind, p, t).item(), -1e-12) << to_string(kind.kind);
    for (const auto& kind : {DistanceKind::mse(), DistanceKind::l1()}) {
      EXPECT_GT(distance(kind, p, t).item(), 0.0);
      EXPECT_EQ(distance(kind, p, t).item(), distance(kind, t, p).item());
    }
    Tensor ps = p, ts = t;
    const double c1 = 10 * rng.normal(), c2 = 10 * rng.normal();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        ps(i, j) += c1 * static_cast<double>(i + 1);
        ts(i, j) += c2;
      }
    EXPECT_NEAR(distance(DistanceKind::kl(), ps, ts).item(), distance(DistanceKind::kl(), p, t).item(), 1e-12);
  }
}

TEST(Distance, GradientFlowsOnlyThroughPrediction) {
  auto rng = rng_stream(5, "stopgrad");
  for (const auto& kind : kAllKinds) {
    Tape tape;
    TapeScope scope(tape);
    const Tensor p = tape.watch(random_matrix(rng, 3, 4));
    const Tensor t = tape.watch(random_matrix(rng, 3, 4));
    const auto g = backward(tape, distance(kind, p, t));
    EXPECT_TRUE(g.contains(*p.node())) << to_string(kind.kind);
    EXPECT_FALSE(g.contains(*t.node())) << to_string(kind.kind);
    const auto leaves = g.leaves();
    EXPECT_EQ(leaves, std::vector<NodeId>{*p.node()});
  }
}

TEST(Distance, GradientsMatchFiniteDifferences) {
  auto rng = rng_stream(6, "dist-fd");
  const MlpSpec spec{3, {5}, 4};
  for (const auto& kind : kAllKinds) {
    const ParamSet p = init_params(spec, 3);
    const Tensor x = random_matrix(rng, 4, 3);
    const Tensor target = random_matrix(rng, 4, 4);
    const double err =
        companion::testing::param_grad_error(p, [&](const ParamSet& q) { return distance(kind, forward(q, x), target); });
    EXPECT_LT(err, 1e-5) << to_string(kind.kind);
  }
}
