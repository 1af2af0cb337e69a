// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The VQT Authors.
//
// Transducer negative log-likelihood. Alignment convention: a blank at (t, u)
// moves to (t + 1, u), label y[u] at (t, u) moves to (t, u + 1), and every
// alignment ends with the blank emitted at (T - 1, U).

#pragma once

#include "vqt/numerics.hpp"

#include <vector>

namespace vqt {

/// T x (U + 1) x V log-probabilities (V = |Y| + 1, blank at 0) for one
/// utterance, together with the label sequence that indexes it.
class LogProbGrid {
 public:
  LogProbGrid() = default;
  LogProbGrid(int frames, std::vector<int> labels, int num_outputs)
      : T_(frames), U_(static_cast<int>(labels.size())), V_(num_outputs), labels_(std::move(labels)),
        data_(static_cast<size_t>(frames) * static_cast<size_t>(U_ + 1) * static_cast<size_t>(num_outputs), 0.0) {
    require(frames >= 0 && num_outputs >= 2, "LogProbGrid: bad shape");
    for (int y : labels_) require(y >= 1 && y < V_, "LogProbGrid: label outside vocabulary");
  }

  int frames() const { return T_; }
  int label_count() const { return U_; }
  int num_outputs() const { return V_; }
  const std::vector<int>& labels() const { return labels_; }

  double& at(int t, int u, int k) { return data_[index(t, u, k)]; }
  double at(int t, int u, int k) const { return data_[index(t, u, k)]; }
  double blank(int t, int u) const { return at(t, u, 0); }
  /// Log-prob of emitting the next reference label y[u] from (t, u).
  double emit(int t, int u) const { return at(t, u, labels_[static_cast<size_t>(u)]); }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

 private:
  size_t index(int t, int u, int k) const {
    return (static_cast<size_t>(t) * static_cast<size_t>(U_ + 1) + static_cast<size_t>(u)) *
               static_cast<size_t>(V_) +
           static_cast<size_t>(k);
  }
  int T_ = 0, U_ = 0, V_ = 2;
  std::vector<int> labels_;
  std::vector<double> data_;
};

/// alpha(t, u): log mass of reaching (t, u); beta(t, u): log mass of
/// finishing from (t, u), including the emission made there.
struct AlignmentTrellis {
  Mat alpha;
  Mat beta;
  double nll = 0.0;
};

inline void check_alignable(const LogProbGrid& grid, const std::vector<int>& y) {
  require(static_cast<int>(y.size()) == grid.label_count() && y == grid.labels(),
          "forward_backward: label sequence does not match the grid");
  if (grid.frames() == 0)
    throw ContractViolation("forward_backward: impossible alignment, no frames for " +
                            std::to_string(y.size()) + " labels");
}

inline AlignmentTrellis forward_backward(const LogProbGrid& grid, const std::vector<int>& y) {
  check_alignable(grid, y);
  const int T = grid.frames(), U = grid.label_count();
  AlignmentTrellis tr;
  tr.alpha = Mat::Constant(T, U + 1, kNegInf);
  tr.beta = Mat::Constant(T, U + 1, kNegInf);
  tr.alpha(0, 0) = 0.0;
  for (int t = 0; t < T; ++t) {
    for (int u = 0; u <= U; ++u) {
      if (t == 0 && u == 0) continue;
      double a = kNegInf;
      if (t > 0) a = tr.alpha(t - 1, u) + grid.blank(t - 1, u);
      if (u > 0) a = log_add(a, tr.alpha(t, u - 1) + grid.emit(t, u - 1));
      tr.alpha(t, u) = a;
    }
  }
  tr.beta(T - 1, U) = grid.blank(T - 1, U);
  for (int t = T - 1; t >= 0; --t) {
    for (int u = U; u >= 0; --u) {
      if (t == T - 1 && u == U) continue;
      double b = kNegInf;
      if (t < T - 1) b = grid.blank(t, u) + tr.beta(t + 1, u);
      if (u < U) b = log_add(b, grid.emit(t, u) + tr.beta(t, u + 1));
      tr.beta(t, u) = b;
    }
  }
  tr.nll = -(tr.alpha(T - 1, U) + grid.blank(T - 1, U));
  return tr;
}

/// -log p(y | x) marginalised over all alignments, O(T U).
inline double forward_backward_nll(const LogProbGrid& grid, const std::vector<int>& y) {
  return forward_backward(grid, y).nll;
}

/// Explicit enumeration of every alignment (test oracle). Refuses T + U > 12.
struct BruteForceResult {
  double nll = 0.0;
  size_t alignments = 0;
};

inline BruteForceResult brute_force(const LogProbGrid& grid, const std::vector<int>& y) {
  check_alignable(grid, y);
  const int T = grid.frames(), U = grid.label_count();
  if (T + U > 12) throw ContractViolation("brute_force_nll: T + U exceeds 12, refusing to enumerate");
  std::vector<double> paths;
  // iterative DFS over (t, u, accumulated log-prob)
  struct Frame {
    int t, u;
    double acc;
  };
  std::vector<Frame> stack{{0, 0, 0.0}};
  while (!stack.empty()) {
    Frame f = stack.back();
    stack.pop_back();
    if (f.t == T - 1 && f.u == U) {
      paths.push_back(f.acc + grid.blank(f.t, f.u));
      continue;
    }
    if (f.t < T - 1) stack.push_back({f.t + 1, f.u, f.acc + grid.blank(f.t, f.u)});
    if (f.u < U) stack.push_back({f.t, f.u + 1, f.acc + grid.emit(f.t, f.u)});
  }
  return {-log_sum_exp(std::span<const double>(paths)), paths.size()};
}

inline double brute_force_nll(const LogProbGrid& grid, const std::vector<int>& y) {
  return brute_force(grid, y).nll;
}

/// dnll / d grid entry, via alpha-beta occupancies. Entries no alignment
/// touches are exactly zero.
inline LogProbGrid nll_gradient(const LogProbGrid& grid, const std::vector<int>& y,
                                const AlignmentTrellis* trellis = nullptr) {
  AlignmentTrellis local;
  if (trellis == nullptr) {
    local = forward_backward(grid, y);
    trellis = &local;
  }
  const int T = grid.frames(), U = grid.label_count();
  LogProbGrid g(T, y, grid.num_outputs());
  const Mat& a = trellis->alpha;
  const Mat& b = trellis->beta;
  const double nll = trellis->nll;
  for (int t = 0; t < T; ++t) {
    for (int u = 0; u <= U; ++u) {
      if (a(t, u) == kNegInf) continue;
      if (t < T - 1 && b(t + 1, u) != kNegInf)
        g.at(t, u, 0) = -std::exp(a(t, u) + grid.blank(t, u) + b(t + 1, u) + nll);
      else if (t == T - 1 && u == U)
        g.at(t, u, 0) = -std::exp(a(t, u) + grid.blank(t, u) + nll);
      if (u < U && b(t, u + 1) != kNegInf)
        g.at(t, u, y[static_cast<size_t>(u)]) = -std::exp(a(t, u) + grid.emit(t, u) + b(t, u + 1) + nll);
    }
  }
  return g;
}

}  // namespace vqt
