// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The VQT Authors.

#include "vqt/loss.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

namespace vqt {
namespace {

using testing::random_grid;
using testing::random_labels;

LogProbGrid uniform_grid(int T, const std::vector<int>& y, int V) {
  LogProbGrid g(T, y, V);
  std::fill(g.data().begin(), g.data().end(), -std::log(static_cast<double>(V)));
  return g;
}

TEST(TransducerLoss, SingleFrameNoLabels) {
  LogProbGrid g(1, {}, 3);
  g.at(0, 0, 0) = std::log(0.25);
  EXPECT_NEAR(forward_backward_nll(g, {}), -std::log(0.25), 1e-12);
  EXPECT_EQ(brute_force(g, {}).alignments, 1u);
}

TEST(TransducerLoss, TwoFramesOneLabelUniform) {
  const LogProbGrid g = uniform_grid(2, {1}, 2);
  const BruteForceResult bf = brute_force(g, {1});
  EXPECT_EQ(bf.alignments, 2u);
  // two alignments of three emissions each at probability 1/2: 2 / 8
  EXPECT_NEAR(forward_backward_nll(g, {1}), std::log(4.0), 1e-12);
  EXPECT_NEAR(bf.nll, std::log(4.0), 1e-12);
}

TEST(TransducerLoss, AlignmentCountIsBinomial) {
  // (T - 1 + U choose U) alignments
  EXPECT_EQ(brute_force(uniform_grid(3, {1, 2}, 3), {1, 2}).alignments, 6u);
  EXPECT_EQ(brute_force(uniform_grid(4, {1, 1, 2}, 3), {1, 1, 2}).alignments, 20u);
  EXPECT_EQ(brute_force(uniform_grid(5, {}, 3), {}).alignments, 1u);
}

TEST(TransducerLoss, ForwardMatchesBruteForceOnRandomGrids) {
  SeededRng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const int T = 1 + static_cast<int>(rng.uniform_int(0, 5));
    const int U = static_cast<int>(rng.uniform_int(0, 5));
    const int V = 2 + static_cast<int>(rng.uniform_int(0, 3));
    const std::vector<int> y = random_labels(rng, U, V - 1);
    const LogProbGrid g = random_grid(rng, T, y, V);
    const double fb = forward_backward_nll(g, y);
    const double bf = brute_force_nll(g, y);
    EXPECT_NEAR(fb, bf, 1e-9 * std::max(1.0, std::abs(bf))) << "T=" << T << " U=" << U;
    EXPECT_GE(fb, 0.0);
  }
}

TEST(TransducerLoss, BruteForceRefusesLargeProblems) {
  const std::vector<int> y(6, 1);
  EXPECT_THROW(brute_force(uniform_grid(7, y, 2), y), ContractViolation);
  EXPECT_NO_THROW(forward_backward_nll(uniform_grid(7, y, 2), y));
}

TEST(TransducerLoss, ZeroFramesIsImpossible) {
  LogProbGrid g(0, {1}, 2);
  EXPECT_THROW(forward_backward_nll(g, {1}), ContractViolation);
  LogProbGrid g2(2, {1}, 2);
  EXPECT_THROW(forward_backward_nll(g2, {1, 1}), ContractViolation);
}

TEST(TransducerLoss, ManyLabelsPerFrameAllowed) {
  // U > T is representable: all labels can be emitted within one frame
  const std::vector<int> y{1, 2, 1, 2};
  const LogProbGrid g = uniform_grid(1, y, 3);
  EXPECT_NEAR(forward_backward_nll(g, y), 5.0 * std::log(3.0), 1e-12);
}

TEST(TransducerLoss, GradientMatchesFiniteDifferences) {
  SeededRng rng(32);
  for (int trial = 0; trial < 10; ++trial) {
    const int T = 1 + static_cast<int>(rng.uniform_int(0, 3));
    const int U = static_cast<int>(rng.uniform_int(0, 3));
    const std::vector<int> y = random_labels(rng, U, 3);
    LogProbGrid g = random_grid(rng, T, y, 4);
    const LogProbGrid grad = nll_gradient(g, y);
    const double h = 1e-4;
    for (size_t i = 0; i < g.data().size(); ++i) {
      const double keep = g.data()[i];
      g.data()[i] = keep + h;
      const double up = forward_backward_nll(g, y);
      g.data()[i] = keep - h;
      const double down = forward_backward_nll(g, y);
      g.data()[i] = keep;
      EXPECT_NEAR(grad.data()[i], (up - down) / (2 * h), 1e-7);
    }
  }
}

TEST(TransducerLoss, GradientRelativeErrorOnSmallInstance) {
  SeededRng rng(38);
  const std::vector<int> y{2, 1};
  LogProbGrid g = random_grid(rng, 3, y, 3);
  const LogProbGrid grad = nll_gradient(g, y);
  double diff = 0, na = 0, nn = 0;
  const double h = 1e-5;
  for (size_t i = 0; i < g.data().size(); ++i) {
    const double keep = g.data()[i];
    g.data()[i] = keep + h;
    const double up = forward_backward_nll(g, y);
    g.data()[i] = keep - h;
    const double down = forward_backward_nll(g, y);
    g.data()[i] = keep;
    const double fd = (up - down) / (2 * h);
    diff += (fd - grad.data()[i]) * (fd - grad.data()[i]);
    na += grad.data()[i] * grad.data()[i];
    nn += fd * fd;
  }
  EXPECT_LT(std::sqrt(diff) / std::max(std::sqrt(na), std::sqrt(nn)), 1e-4);
}

TEST(TransducerLoss, LogitGradientSumsToZeroPerSlice) {
  // with log-probs = log_softmax(z), dnll/dz_k = g_k - p_k * sum_j g_j
  SeededRng rng(39);
  const std::vector<int> y{1, 2, 1};
  const LogProbGrid g = random_grid(rng, 4, y, 3);
  const LogProbGrid grad = nll_gradient(g, y);
  for (int t = 0; t < 4; ++t)
    for (int u = 0; u <= 3; ++u) {
      double gs = 0, dz = 0;
      for (int k = 0; k < 3; ++k) gs += grad.at(t, u, k);
      for (int k = 0; k < 3; ++k) dz += grad.at(t, u, k) - std::exp(g.at(t, u, k)) * gs;
      EXPECT_NEAR(dz, 0.0, 1e-12);
    }
}

TEST(TransducerLoss, UnreachableEntriesHaveZeroGradient) {
  // from (t, U) no label can be emitted; label entries other than y[u] are never used
  SeededRng rng(33);
  const std::vector<int> y{2, 1};
  const LogProbGrid g = random_grid(rng, 3, y, 4);
  const LogProbGrid grad = nll_gradient(g, y);
  for (int t = 0; t < 3; ++t)
    for (int u = 0; u <= 2; ++u)
      for (int k = 1; k < 4; ++k) {
        const bool used = u < 2 && k == y[static_cast<size_t>(u)];
        if (!used) EXPECT_EQ(grad.at(t, u, k), 0.0);
      }
  // blank at (T - 1, u < U) cannot be used: the alignment would end early
  EXPECT_EQ(grad.at(2, 0, 0), 0.0);
  EXPECT_EQ(grad.at(2, 1, 0), 0.0);
}

TEST(TransducerLoss, GradientSumsToAlignmentLength) {
  // each alignment uses exactly T + U entries, so occupancies sum to T + U
  SeededRng rng(34);
  for (int trial = 0; trial < 20; ++trial) {
    const int T = 1 + trial % 4, U = trial % 3;
    const std::vector<int> y = random_labels(rng, U, 2);
    const LogProbGrid grad = nll_gradient(random_grid(rng, T, y, 3), y);
    double s = 0;
    for (double v : grad.data()) s += v;
    EXPECT_NEAR(-s, T + U, 1e-9);
  }
}

TEST(TransducerLoss, InvariantUnderVocabularyPermutation) {
  SeededRng rng(35);
  const std::vector<int> y{1, 3, 2};
  const LogProbGrid g = random_grid(rng, 4, y, 4);
  // relabel non-blank outputs by 1->2->3->1 in both grid and labels
  auto perm = [](int k) { return k == 0 ? 0 : k % 3 + 1; };
  std::vector<int> py;
  for (int v : y) py.push_back(perm(v));
  LogProbGrid pg(4, py, 4);
  for (int t = 0; t < 4; ++t)
    for (int u = 0; u <= 3; ++u)
      for (int k = 0; k < 4; ++k) pg.at(t, u, perm(k)) = g.at(t, u, k);
  EXPECT_NEAR(forward_backward_nll(pg, py), forward_backward_nll(g, y), 1e-12);
}

TEST(TransducerLoss, EveryDiagonalCarriesTheFullMass) {
  // each alignment crosses every anti-diagonal t + u = n exactly once
  SeededRng rng(36);
  const std::vector<int> y{1, 2, 2};
  const LogProbGrid g = random_grid(rng, 5, y, 3);
  const AlignmentTrellis tr = forward_backward(g, y);
  for (int n = 0; n <= 4 + 3; ++n) {
    std::vector<double> terms;
    for (int t = 0; t < 5; ++t) {
      const int u = n - t;
      if (u < 0 || u > 3) continue;
      terms.push_back(tr.alpha(t, u) + tr.beta(t, u));
    }
    EXPECT_NEAR(log_sum_exp(std::span<const double>(terms)), -tr.nll, 1e-10) << "n=" << n;
  }
  EXPECT_NEAR(tr.beta(0, 0), -tr.nll, 1e-10);
}

TEST(TransducerLoss, DeterministicRepeatedEvaluation) {
  SeededRng rng(37);
  const std::vector<int> y{1, 1};
  const LogProbGrid g = random_grid(rng, 4, y, 2);
  EXPECT_EQ(forward_backward_nll(g, y), forward_backward_nll(g, y));
}

}  // namespace
}  // namespace vqt
