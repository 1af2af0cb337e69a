// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The VQT Authors.
//
// Numeric kernel: dense maps, activations, log-domain arithmetic, a fixed
// pseudo-random generator and the Gumbel-softmax sampler.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>

namespace vqt {

/// Raised when a caller breaks a documented precondition.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for failures that depend on data rather than on the caller.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// SeededRng: xoshiro256** seeded through splitmix64. The algorithm is fixed so
// that a seed produces the same stream on every platform; the standard library
// distributions are deliberately not used because their output is
// implementation-defined.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Mixes a parent seed with a stream index into an independent child seed.
inline uint64_t derive_seed(uint64_t parent, uint64_t stream) {
  uint64_t s = parent ^ (0xd1b54a32d192ed03ULL * (stream + 1));
  splitmix64(s);
  return splitmix64(s);
}

class SeededRng {
 public:
  explicit SeededRng(uint64_t seed = 0) : seed_(seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in the open interval (0, 1).
  double uniform_open() {
    double u;
    do u = uniform();
    while (u == 0.0);
    return u;
  }

  /// Uniform integer in [lo, hi] (inclusive), rejection sampled.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    require(hi >= lo, "uniform_int: empty range");
    const uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    uint64_t x;
    do x = next_u64();
    while (x >= limit);
    return lo + static_cast<int64_t>(x % range);
  }

  /// Standard normal via Box-Muller (one value per call, no caching).
  double normal() {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double gumbel() { return -std::log(-std::log(uniform_open())); }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t seed_;
  uint64_t s_[4];
};

// ---------------------------------------------------------------------------
// DenseMap
// ---------------------------------------------------------------------------

/// Affine map x -> W x + b.
struct DenseMap {
  Mat weight;
  Vec bias;

  DenseMap() = default;
  DenseMap(Eigen::Index out_dim, Eigen::Index in_dim)
      : weight(Mat::Zero(out_dim, in_dim)), bias(Vec::Zero(out_dim)) {
    require(out_dim >= 1 && in_dim >= 1, "DenseMap: dimensions must be >= 1");
  }

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }

  Vec apply(const Vec& x) const {
    if (x.size() != weight.cols())
      throw ContractViolation("dense_apply: input has " + std::to_string(x.size()) +
                              " entries, map expects " + std::to_string(weight.cols()));
    return weight * x + bias;
  }

  /// Uniform(-scale, scale) initialisation, scale = 1/sqrt(in_dim).
  void init_uniform(SeededRng& rng, double scale = 0.0) {
    if (scale <= 0.0) scale = 1.0 / std::sqrt(static_cast<double>(in_dim()));
    for (Eigen::Index c = 0; c < weight.cols(); ++c)
      for (Eigen::Index r = 0; r < weight.rows(); ++r)
        weight(r, c) = (2.0 * rng.uniform() - 1.0) * scale;
    bias.setZero();
  }
};

inline Vec dense_apply(const DenseMap& map, const Vec& x) { return map.apply(x); }

// ---------------------------------------------------------------------------
// Log-domain arithmetic and activations
// ---------------------------------------------------------------------------

inline double log_sum_exp(std::span<const double> values) {
  require(!values.empty(), "log_sum_exp: empty input");
  double mx = kNegInf;
  for (double v : values) mx = std::max(mx, v);
  if (mx == kNegInf) return kNegInf;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - mx);
  return mx + std::log(acc);
}

inline double log_sum_exp(const Vec& values) {
  return log_sum_exp(std::span<const double>(values.data(), static_cast<size_t>(values.size())));
}

/// log(exp(a) + exp(b)).
inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double mx = std::max(a, b);
  return mx + std::log1p(std::exp(std::min(a, b) - mx));
}

enum class Activation { kSigmoid, kTanh, kSoftmax, kLogSoftmax };

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Vec softmax(const Vec& x) {
  const double mx = x.maxCoeff();
  Vec e = (x.array() - mx).exp().matrix();
  return e / e.sum();
}

inline Vec log_softmax(const Vec& x) {
  return (x.array() - log_sum_exp(x)).matrix();
}

inline Vec activate(Activation kind, const Vec& x) {
  switch (kind) {
    case Activation::kSigmoid:
      return x.unaryExpr([](double v) { return sigmoid(v); });
    case Activation::kTanh:
      return x.array().tanh().matrix();
    case Activation::kSoftmax:
      return softmax(x);
    case Activation::kLogSoftmax:
      return log_softmax(x);
  }
  return x;
}

/// Index of the largest entry; ties resolve to the lowest index.
inline Eigen::Index argmax(const Vec& x) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < x.size(); ++i)
    if (x[i] > x[best]) best = i;
  return best;
}

// ---------------------------------------------------------------------------
// Gumbel-softmax
// ---------------------------------------------------------------------------

struct GumbelSample {
  Vec probs;
  Eigen::Index index = 0;

  /// Forward value seen downstream: one-hot of index when hard, probs otherwise.
  Vec value(bool hard) const {
    if (!hard) return probs;
    Vec v = Vec::Zero(probs.size());
    v[index] = 1.0;
    return v;
  }
};

/// With an rng the logits are perturbed by Gumbel noise before the tempered
/// softmax; without one (inference) the index is the plain argmax of logits.
inline GumbelSample gumbel_softmax(const Vec& logits, double temperature, SeededRng* rng) {
  require(temperature > 0.0, "gumbel_softmax: temperature must be positive");
  require(logits.size() >= 1, "gumbel_softmax: empty logits");
  GumbelSample out;
  if (rng != nullptr) {
    Vec noisy = logits;
    for (Eigen::Index i = 0; i < noisy.size(); ++i) noisy[i] += rng->gumbel();
    out.probs = softmax(noisy / temperature);
    out.index = argmax(out.probs);
  } else {
    out.probs = softmax(logits / temperature);
    out.index = argmax(logits);
  }
  return out;
}

/// Backward of p = softmax(z / temperature): returns dL/dz given dL/dp.
inline Vec softmax_backward(const Vec& probs, const Vec& dprobs, double temperature) {
  const double dot = probs.dot(dprobs);
  return (probs.array() * (dprobs.array() - dot)).matrix() / temperature;
}

/// Linear anneal between two temperatures over [0, 1] training progress.
struct TemperatureSchedule {
  double start = 2.0;
  double end = 0.5;

  double at(double progress) const {
    progress = std::clamp(progress, 0.0, 1.0);
    return start + (end - start) * progress;
  }
};

}  // namespace vqt
