// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The VQT Authors.

#include "vqt/numerics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

namespace vqt {
namespace {

TEST(DenseMap, IdentityAndZeroMaps) {
  DenseMap id(2, 2);
  id.weight.setIdentity();
  Vec x(2);
  x << 3, -1;
  EXPECT_EQ(dense_apply(id, x), x);

  DenseMap z(2, 3);
  z.bias << 1, 2;
  Vec any(3);
  any << 7, -8, 9;
  Vec want(2);
  want << 1, 2;
  EXPECT_EQ(dense_apply(z, any), want);
}

TEST(DenseMap, MatchesTripleLoopOracle) {
  SeededRng rng(11);
  DenseMap m(4, 3);
  m.init_uniform(rng, 1.0);
  for (int i = 0; i < 4; ++i) m.bias(i) = rng.normal();
  Vec x(3);
  for (int j = 0; j < 3; ++j) x(j) = rng.normal();
  const Vec y = dense_apply(m, x);
  for (int i = 0; i < 4; ++i) {
    double acc = m.bias(i);
    for (int j = 0; j < 3; ++j) acc += m.weight(i, j) * x(j);
    EXPECT_NEAR(y(i), acc, 1e-12);
  }
}

TEST(DenseMap, DimensionMismatchIsContractViolation) {
  DenseMap m(2, 3);
  EXPECT_THROW(dense_apply(m, Vec::Zero(2)), ContractViolation);
}

TEST(LogSumExp, Examples) {
  std::vector<double> half{std::log(0.5), std::log(0.5)};
  EXPECT_NEAR(log_sum_exp(half), 0.0, 1e-15);
  std::vector<double> one{-3.25};
  EXPECT_EQ(log_sum_exp(one), -3.25);
  std::vector<double> zeros{0.0, 0.0};
  EXPECT_NEAR(log_sum_exp(zeros), std::log(2.0), 1e-15);
  std::vector<double> dead{kNegInf, kNegInf};
  EXPECT_EQ(log_sum_exp(dead), kNegInf);
  std::vector<double> none;
  EXPECT_THROW(log_sum_exp(none), ContractViolation);
}

TEST(LogSumExp, ShiftInvariance) {
  SeededRng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(1 + trial % 7), w;
    for (double& e : v) e = 50.0 * rng.normal();
    const double c = 100.0 * rng.normal();
    for (double e : v) w.push_back(e + c);
    EXPECT_NEAR(log_sum_exp(w), log_sum_exp(v) + c, 1e-9);
  }
}

TEST(LogSumExp, StableForLargeMagnitudes) {
  std::vector<double> big{1000.0, 1000.0};
  EXPECT_NEAR(log_sum_exp(big), 1000.0 + std::log(2.0), 1e-12);
  std::vector<double> small{-1000.0, -1000.0};
  EXPECT_NEAR(log_sum_exp(small), -1000.0 + std::log(2.0), 1e-12);
}

TEST(Activations, Examples) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  const Vec s = softmax(Vec::Zero(2));
  EXPECT_DOUBLE_EQ(s(0), 0.5);
  EXPECT_DOUBLE_EQ(s(1), 0.5);
}

TEST(Activations, LogSoftmaxIdentityAndNormalization) {
  SeededRng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Vec x(1 + trial % 9);
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = 10.0 * rng.normal();
    const Vec ls = log_softmax(x);
    const double lse = log_sum_exp(x);
    for (Eigen::Index i = 0; i < x.size(); ++i) EXPECT_NEAR(ls(i), x(i) - lse, 1e-12);
    EXPECT_NEAR(ls.array().exp().sum(), 1.0, 1e-9);
    EXPECT_NEAR(softmax(x).sum(), 1.0, 1e-12);
  }
}

TEST(Activations, TanhMatchesScalarTanh) {
  Vec x(3);
  x << -2, 0, 0.7;
  const Vec t = activate(Activation::kTanh, x);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(t(i), std::tanh(x(i)), 1e-15);
}

TEST(SeededRng, SameSeedSameStream) {
  SeededRng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const uint64_t va = a.next_u64();
    EXPECT_EQ(va, b.next_u64());
    differs |= va != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(SeededRng, KnownFirstOutputs) {
  // xoshiro256** state from splitmix64(0): pinned so that a change of
  // algorithm is caught rather than silently altering every artifact.
  SeededRng r(0);
  const uint64_t first = r.next_u64();
  SeededRng again(0);
  EXPECT_EQ(first, again.next_u64());
  uint64_t sm = 0;
  uint64_t s[4];
  for (auto& w : s) w = splitmix64(sm);
  const uint64_t x = s[1] * 5;
  const uint64_t expect = ((x << 7) | (x >> 57)) * 9;
  EXPECT_EQ(first, expect);
}

TEST(SeededRng, UniformIntHistogramIsFlat) {
  SeededRng rng(9);
  std::vector<int> hist(6, 0);
  const int n = 60000;
  for (int i = 0; i < n; ++i) ++hist[static_cast<size_t>(rng.uniform_int(0, 5))];
  for (int h : hist) EXPECT_NEAR(static_cast<double>(h) / n, 1.0 / 6.0, 0.01);
}

TEST(SeededRng, NormalMoments) {
  SeededRng rng(10);
  double s = 0, s2 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.02);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(DeriveSeed, StreamsDiffer) {
  EXPECT_NE(derive_seed(1, 1), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 1), derive_seed(2, 1));
  EXPECT_EQ(derive_seed(7, 3), derive_seed(7, 3));
}

TEST(GumbelSoftmax, ClearWinnerWithoutNoise) {
  Vec l(3);
  l << 5, 0, 0;
  EXPECT_EQ(gumbel_softmax(l, 1.0, nullptr).index, 0);
}

TEST(GumbelSoftmax, LowTemperatureLimit) {
  Vec l(2);
  l << 1, 0;
  const GumbelSample s = gumbel_softmax(l, 0.01, nullptr);
  EXPECT_NEAR(s.probs(0), 1.0, 1e-6);
  EXPECT_NEAR(s.probs(1), 0.0, 1e-6);
}

TEST(GumbelSoftmax, EqualLogitsSampleUniformly) {
  SeededRng rng(2024);
  const int K = 4, n = 10000;
  std::vector<int> hist(K, 0);
  const Vec l = Vec::Constant(K, 0.3);
  for (int i = 0; i < n; ++i) ++hist[static_cast<size_t>(gumbel_softmax(l, 1.0, &rng).index)];
  for (int h : hist) EXPECT_NEAR(static_cast<double>(h) / n, 1.0 / K, 0.05);
}

TEST(GumbelSoftmax, SamplingFollowsSoftmaxOfLogits) {
  // argmax(logits + Gumbel) is distributed as softmax(logits)
  SeededRng rng(77);
  Vec l(3);
  l << 1.0, 0.0, -1.0;
  const Vec p = softmax(l);
  const int n = 20000;
  std::vector<int> hist(3, 0);
  for (int i = 0; i < n; ++i) ++hist[static_cast<size_t>(gumbel_softmax(l, 0.7, &rng).index)];
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(static_cast<double>(hist[static_cast<size_t>(k)]) / n, p(k), 0.02);
}

TEST(GumbelSoftmax, NoiselessIsDeterministicAndTempered) {
  Vec l(3);
  l << 0.2, -1.0, 0.5;
  const GumbelSample a = gumbel_softmax(l, 2.0, nullptr);
  const GumbelSample b = gumbel_softmax(l, 2.0, nullptr);
  EXPECT_EQ(a.index, b.index);
  EXPECT_EQ(a.probs, b.probs);
  const Vec want = softmax(l / 2.0);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(a.probs(k), want(k), 1e-15);
  EXPECT_EQ(a.index, 2);
}

TEST(GumbelSoftmax, HardValueIsOneHot) {
  SeededRng rng(1);
  Vec l(4);
  l << 0.1, 0.2, 0.3, 0.4;
  const GumbelSample s = gumbel_softmax(l, 1.0, &rng);
  const Vec v = s.value(true);
  EXPECT_EQ(v.sum(), 1.0);
  EXPECT_EQ(v(s.index), 1.0);
  EXPECT_EQ(s.index, argmax(s.probs));
}

TEST(GumbelSoftmax, NonPositiveTemperatureRejected) {
  EXPECT_THROW(gumbel_softmax(Vec::Zero(2), 0.0, nullptr), ContractViolation);
  EXPECT_THROW(gumbel_softmax(Vec::Zero(2), -1.0, nullptr), ContractViolation);
}

TEST(SoftmaxBackward, MatchesFiniteDifferences) {
  SeededRng rng(4);
  Vec z(5), w(5);
  for (int i = 0; i < 5; ++i) z(i) = rng.normal(), w(i) = rng.normal();
  const double tau = 0.8;
  // L = w . softmax(z / tau)
  const Vec g = softmax_backward(softmax(z / tau), w, tau);
  for (int i = 0; i < 5; ++i) {
    Vec zp = z, zm = z;
    zp(i) += 1e-6;
    zm(i) -= 1e-6;
    const double fd = (w.dot(softmax(zp / tau)) - w.dot(softmax(zm / tau))) / 2e-6;
    EXPECT_NEAR(g(i), fd, 1e-8);
  }
}

TEST(TemperatureSchedule, LinearAnneal) {
  TemperatureSchedule s;
  EXPECT_EQ(s.at(0.0), 2.0);
  EXPECT_EQ(s.at(1.0), 0.5);
  EXPECT_DOUBLE_EQ(s.at(0.5), 1.25);
  EXPECT_EQ(s.at(3.0), 0.5);
}

TEST(Argmax, TiesGoToLowestIndex) {
  Vec x(4);
  x << 1, 3, 3, 2;
  EXPECT_EQ(argmax(x), 1);
}

}  // namespace
}  // namespace vqt
