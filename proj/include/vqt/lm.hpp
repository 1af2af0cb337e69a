// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The VQT Authors.
//
// Add-k smoothed n-gram model over label ids and n-best rescoring.
//
// Token ids: labels 1..K, begin-of-sentence 0 (context padding only) and
// end-of-sentence K + 1. Orders 2 and 3 use sentence boundaries, so their
// distributions range over K + 1 outcomes. Order 1 is a plain unigram over
// the K labels with no boundary symbols.

#pragma once

#include "vqt/lattice.hpp"
#include "vqt/numerics.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace vqt {

class NGramLM {
 public:
  NGramLM() = default;
  NGramLM(int order, double k, int num_labels) : order_(order), k_(k), num_labels_(num_labels) {
    require(order >= 1 && order <= 3, "NGramLM: order must be 1, 2 or 3");
    require(k > 0.0, "NGramLM: smoothing constant must be positive");
    require(num_labels >= 1, "NGramLM: empty vocabulary");
  }

  int order() const { return order_; }
  double k() const { return k_; }
  int num_labels() const { return num_labels_; }
  int bos() const { return 0; }
  int eos() const { return num_labels_ + 1; }
  bool uses_boundaries() const { return order_ >= 2; }
  int outcome_count() const { return uses_boundaries() ? num_labels_ + 1 : num_labels_; }

  void add_count(const std::vector<int>& ctx, int sym, double c = 1.0) {
    counts_[ctx][sym] += c;
    totals_[ctx] += c;
  }

  /// log p(sym | ctx) with add-k smoothing; ctx holds the order - 1 previous
  /// tokens (oldest first).
  double log_prob(const std::vector<int>& ctx, int sym) const {
    double c = 0.0, total = 0.0;
    if (auto it = counts_.find(ctx); it != counts_.end()) {
      total = totals_.at(ctx);
      if (auto s = it->second.find(sym); s != it->second.end()) c = s->second;
    }
    return std::log((c + k_) / (total + k_ * outcome_count()));
  }

  const std::map<std::vector<int>, std::map<int, double>>& counts() const { return counts_; }

 private:
  int order_ = 1;
  double k_ = 1.0;
  int num_labels_ = 1;
  std::map<std::vector<int>, std::map<int, double>> counts_;
  std::map<std::vector<int>, double> totals_;
};

namespace detail {

// Calls f(context, symbol) for every predicted token of a sentence.
template <class F>
void for_each_event(const NGramLM& lm, const std::vector<int>& sentence, F&& f) {
  for (int s : sentence)
    if (s < 1 || s > lm.num_labels()) throw ContractViolation("lm: unknown symbol id " + std::to_string(s));
  if (!lm.uses_boundaries()) {
    for (int s : sentence) f(std::vector<int>{}, s);
    return;
  }
  std::vector<int> ctx(static_cast<size_t>(lm.order() - 1), lm.bos());
  auto advance = [&](int s) {
    f(ctx, s);
    if (!ctx.empty()) {
      ctx.erase(ctx.begin());
      ctx.push_back(s);
    }
  };
  for (int s : sentence) advance(s);
  advance(lm.eos());
}

}  // namespace detail

inline NGramLM train_ngram(const std::vector<std::vector<int>>& corpus, int num_labels, int order, double k) {
  NGramLM lm(order, k, num_labels);
  size_t events = 0;
  for (const auto& sentence : corpus)
    detail::for_each_event(lm, sentence, [&](const std::vector<int>& ctx, int s) {
      lm.add_count(ctx, s);
      ++events;
    });
  if (events == 0) throw ContractViolation("train_ngram: empty corpus");
  return lm;
}

/// Sum of conditional log-probs, including end-of-sentence for orders >= 2.
inline double lm_score(const NGramLM& lm, const std::vector<int>& sentence) {
  double s = 0.0;
  detail::for_each_event(lm, sentence, [&](const std::vector<int>& ctx, int sym) { s += lm.log_prob(ctx, sym); });
  return s;
}

// Text format:
//   vqt-ngram 1
//   order <n> k <k> labels <K>
//   entries <M>
//   <ctx...> : <sym> <count>       one line per (context, symbol)
inline void write_ngram(std::ostream& os, const NGramLM& lm) {
  size_t m = 0;
  for (const auto& [ctx, row] : lm.counts()) m += row.size();
  char kbuf[40];
  std::snprintf(kbuf, sizeof kbuf, "%.17g", lm.k());
  os << "vqt-ngram 1\norder " << lm.order() << " k " << kbuf << " labels " << lm.num_labels() << "\nentries " << m
     << '\n';
  for (const auto& [ctx, row] : lm.counts())
    for (const auto& [sym, c] : row) {
      for (int t : ctx) os << t << ' ';
      std::snprintf(kbuf, sizeof kbuf, "%.17g", c);
      os << ": " << sym << ' ' << kbuf << '\n';
    }
}

inline NGramLM read_ngram(std::istream& is) {
  std::string line, w1, w2, w3;
  int order = 0, labels = 0;
  double k = 0;
  size_t m = 0;
  if (!std::getline(is, line) || line != "vqt-ngram 1") throw RuntimeFailure("ngram: bad header");
  if (!(is >> w1 >> order >> w2 >> k >> w3 >> labels) || w1 != "order" || w2 != "k" || w3 != "labels")
    throw RuntimeFailure("ngram: bad parameter line");
  if (!(is >> w1 >> m) || w1 != "entries") throw RuntimeFailure("ngram: missing entries line");
  NGramLM lm(order, k, labels);
  for (size_t i = 0; i < m; ++i) {
    std::vector<int> ctx(static_cast<size_t>(order - 1));
    for (int& t : ctx)
      if (!(is >> t)) throw RuntimeFailure("ngram: truncated context");
    int sym = 0;
    double c = 0;
    if (!(is >> w1 >> sym >> c) || w1 != ":") throw RuntimeFailure("ngram: bad count line");
    lm.add_count(ctx, sym, c);
  }
  return lm;
}

inline void save_ngram(const std::string& path, const NGramLM& lm) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeFailure("cannot write " + path);
  write_ngram(os, lm);
}

inline NGramLM load_ngram(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeFailure("cannot read " + path);
  return read_ngram(is);
}

// ---------------------------------------------------------------------------
// Rescoring
// ---------------------------------------------------------------------------

/// combined = acoustic + lambda * lm, stable-sorted best first, so lambda = 0
/// keeps an acoustically sorted input in its original order.
inline std::vector<NBestEntry> rescore(std::vector<NBestEntry> nbest, const NGramLM& lm, double lambda) {
  require(lambda >= 0.0, "rescore: lambda must be non-negative");
  for (auto& e : nbest) {
    if (!e.lm) e.lm = lm_score(lm, e.labels);
    e.combined = e.acoustic + lambda * *e.lm;
  }
  std::stable_sort(nbest.begin(), nbest.end(),
                   [](const NBestEntry& a, const NBestEntry& b) { return a.combined > b.combined; });
  return nbest;
}

struct RescoreItem {
  std::vector<NBestEntry> nbest;  // acoustically sorted
  std::vector<int> reference;
};

struct LambdaSweep {
  std::vector<double> lambdas;
  std::vector<long> errors;
  double best_lambda = 0.0;
  long best_errors = 0;
};

inline std::vector<double> default_lambda_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 10; ++i) g.push_back(i / 10.0);
  return g;
}

inline long rescored_errors(const std::vector<RescoreItem>& items, const NGramLM& lm, double lambda) {
  long e = 0;
  for (const auto& it : items) {
    if (it.nbest.empty()) {
      e += static_cast<long>(it.reference.size());
      continue;
    }
    e += edit_distance(rescore(it.nbest, lm, lambda).front().labels, it.reference);
  }
  return e;
}

/// Grid search minimizing total label errors; ties go to the smaller lambda.
inline LambdaSweep tune_lambda(const std::vector<RescoreItem>& dev, const NGramLM& lm,
                               const std::vector<double>& grid = default_lambda_grid()) {
  require(!grid.empty(), "tune_lambda: empty grid");
  LambdaSweep s;
  for (double l : grid) {
    const long e = rescored_errors(dev, lm, l);
    s.lambdas.push_back(l);
    s.errors.push_back(e);
    if (s.errors.size() == 1 || e < s.best_errors) {
      s.best_errors = e;
      s.best_lambda = l;
    }
  }
  return s;
}

}  // namespace vqt
