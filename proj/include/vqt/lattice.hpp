// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The VQT Authors.
//
// Weighted acyclic acceptor produced by the decoder, plus the metrics and
// transforms that run on it: validation, density, oracle error rate, n-best
// extraction, parallel-arc margin pruning and serialization.
//
// Arc weights are natural-log scores (higher is better). Label arcs carry a
// vocabulary id in [1, |Y|]; the only other arcs are final arcs (label 0)
// entering the end node.

#pragma once

#include "vqt/numerics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

namespace vqt {

constexpr int kFinalLabel = 0;

class LatticeError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

struct Arc {
  int src = 0;
  int dst = 0;
  int label = 0;
  double weight = 0.0;
};

class Lattice {
 public:
  Lattice() : num_nodes_(2) {}

  int start() const { return 0; }
  int end() const { return 1; }
  int num_nodes() const { return num_nodes_; }
  int frames() const { return frames_; }
  void set_frames(int t) { frames_ = t; }
  uint64_t vocab_checksum() const { return vocab_checksum_; }
  void set_vocab_checksum(uint64_t c) { vocab_checksum_ = c; }
  const std::vector<Arc>& arcs() const { return arcs_; }

  int add_node() { return num_nodes_++; }

  /// Appends an arc; returns its index.
  size_t add_arc(int src, int dst, int label, double weight) {
    if (src < 0 || src >= num_nodes_ || dst < 0 || dst >= num_nodes_)
      throw LatticeError("lattice: arc " + std::to_string(src) + " -> " + std::to_string(dst) +
                         " references an unknown node");
    if (label < 0) throw LatticeError("lattice: negative label");
    arcs_.push_back({src, dst, label, weight});
    return arcs_.size() - 1;
  }

  void remove_arc_if(const std::function<bool(const Arc&)>& pred) {
    arcs_.erase(std::remove_if(arcs_.begin(), arcs_.end(), pred), arcs_.end());
  }

  size_t label_arc_count() const {
    return static_cast<size_t>(
        std::count_if(arcs_.begin(), arcs_.end(), [](const Arc& a) { return a.label != kFinalLabel; }));
  }

  std::vector<std::vector<size_t>> out_arcs() const {
    std::vector<std::vector<size_t>> out(static_cast<size_t>(num_nodes_));
    for (size_t i = 0; i < arcs_.size(); ++i) out[static_cast<size_t>(arcs_[i].src)].push_back(i);
    return out;
  }

  std::vector<std::vector<size_t>> in_arcs() const {
    std::vector<std::vector<size_t>> in(static_cast<size_t>(num_nodes_));
    for (size_t i = 0; i < arcs_.size(); ++i) in[static_cast<size_t>(arcs_[i].dst)].push_back(i);
    return in;
  }

  /// Kahn order (smallest ready id first); nullopt when a cycle exists.
  std::optional<std::vector<int>> topological_order() const {
    std::vector<int> indeg(static_cast<size_t>(num_nodes_), 0);
    for (const Arc& a : arcs_) ++indeg[static_cast<size_t>(a.dst)];
    auto out = out_arcs();
    std::priority_queue<int, std::vector<int>, std::greater<>> ready;
    for (int n = 0; n < num_nodes_; ++n)
      if (indeg[static_cast<size_t>(n)] == 0) ready.push(n);
    std::vector<int> order;
    while (!ready.empty()) {
      const int n = ready.top();
      ready.pop();
      order.push_back(n);
      for (size_t ai : out[static_cast<size_t>(n)])
        if (--indeg[static_cast<size_t>(arcs_[ai].dst)] == 0) ready.push(arcs_[ai].dst);
    }
    if (static_cast<int>(order.size()) != num_nodes_) return std::nullopt;
    return order;
  }

  std::vector<bool> reachable_from_start() const {
    std::vector<bool> seen(static_cast<size_t>(num_nodes_), false);
    auto out = out_arcs();
    std::vector<int> stack{start()};
    seen[static_cast<size_t>(start())] = true;
    while (!stack.empty()) {
      const int n = stack.back();
      stack.pop_back();
      for (size_t ai : out[static_cast<size_t>(n)]) {
        const auto d = static_cast<size_t>(arcs_[ai].dst);
        if (!seen[d]) {
          seen[d] = true;
          stack.push_back(arcs_[ai].dst);
        }
      }
    }
    return seen;
  }

  std::vector<bool> coreachable_to_end() const {
    std::vector<bool> seen(static_cast<size_t>(num_nodes_), false);
    auto in = in_arcs();
    std::vector<int> stack{end()};
    seen[static_cast<size_t>(end())] = true;
    while (!stack.empty()) {
      const int n = stack.back();
      stack.pop_back();
      for (size_t ai : in[static_cast<size_t>(n)]) {
        const auto s = static_cast<size_t>(arcs_[ai].src);
        if (!seen[s]) {
          seen[s] = true;
          stack.push_back(arcs_[ai].src);
        }
      }
    }
    return seen;
  }

  /// Drops nodes that are not on some start -> end path and renumbers the
  /// survivors in ascending order of their old ids (start and end keep 0, 1).
  void trim() {
    auto fwd = reachable_from_start();
    auto bwd = coreachable_to_end();
    std::vector<int> remap(static_cast<size_t>(num_nodes_), -1);
    int next = 0;
    for (int n = 0; n < num_nodes_; ++n) {
      const auto sn = static_cast<size_t>(n);
      if (n == start() || n == end() || (fwd[sn] && bwd[sn])) remap[sn] = next++;
    }
    std::vector<Arc> kept;
    for (const Arc& a : arcs_) {
      const auto s = static_cast<size_t>(a.src), d = static_cast<size_t>(a.dst);
      if (fwd[s] && bwd[s] && fwd[d] && bwd[d]) kept.push_back({remap[s], remap[d], a.label, a.weight});
    }
    arcs_ = std::move(kept);
    num_nodes_ = next;
  }

  /// Builds a lattice from raw parts (used by the reader and by tests).
  static Lattice from_arcs(int num_nodes, std::vector<Arc> arcs, int frames, uint64_t checksum = 0) {
    require(num_nodes >= 2, "lattice: need at least start and end nodes");
    Lattice l;
    l.num_nodes_ = num_nodes;
    l.frames_ = frames;
    l.vocab_checksum_ = checksum;
    for (const Arc& a : arcs) l.add_arc(a.src, a.dst, a.label, a.weight);
    return l;
  }

 private:
  int num_nodes_;
  int frames_ = 0;
  uint64_t vocab_checksum_ = 0;
  std::vector<Arc> arcs_;
};

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

struct ValidationReport {
  bool acyclic = true;
  bool reachable = true;
  bool coreachable = true;
  bool finite_weights = true;
  bool labels_valid = true;
  std::vector<std::string> failures;

  bool ok() const { return acyclic && reachable && coreachable && finite_weights && labels_valid; }

  std::string to_text() const {
    std::ostringstream os;
    os << "acyclic " << (acyclic ? "pass" : "FAIL") << '\n'
       << "reachable " << (reachable ? "pass" : "FAIL") << '\n'
       << "coreachable " << (coreachable ? "pass" : "FAIL") << '\n'
       << "finite_weights " << (finite_weights ? "pass" : "FAIL") << '\n'
       << "labels " << (labels_valid ? "pass" : "FAIL") << '\n'
       << "overall " << (ok() ? "pass" : "FAIL") << '\n';
    for (const auto& f : failures) os << "failure " << f << '\n';
    return os.str();
  }
};

/// `num_labels` bounds label ids; pass 0 to skip the range check.
inline ValidationReport validate(const Lattice& lat, int num_labels = 0) {
  ValidationReport r;
  if (!lat.topological_order()) {
    r.acyclic = false;
    r.failures.push_back("cycle detected");
  }
  auto fwd = lat.reachable_from_start();
  auto bwd = lat.coreachable_to_end();
  for (int n = 0; n < lat.num_nodes(); ++n) {
    const auto sn = static_cast<size_t>(n);
    if (!fwd[sn]) {
      r.reachable = false;
      r.failures.push_back("node " + std::to_string(n) + " unreachable from start");
    }
    if (!bwd[sn]) {
      r.coreachable = false;
      r.failures.push_back("node " + std::to_string(n) + " has no path to end");
    }
  }
  for (const Arc& a : lat.arcs()) {
    if (!std::isfinite(a.weight)) {
      r.finite_weights = false;
      r.failures.push_back("non-finite weight on arc " + std::to_string(a.src) + " -> " + std::to_string(a.dst));
    }
    const bool final_arc = a.label == kFinalLabel;
    if (final_arc != (a.dst == lat.end()) || (num_labels > 0 && a.label > num_labels)) {
      r.labels_valid = false;
      r.failures.push_back("bad label " + std::to_string(a.label) + " on arc " + std::to_string(a.src) + " -> " +
                           std::to_string(a.dst));
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Label arcs per frame.
inline double density(const Lattice& lat) {
  require(lat.frames() >= 1, "density: lattice has no frame count");
  return static_cast<double>(lat.label_arc_count()) / static_cast<double>(lat.frames());
}

/// Unit-cost Levenshtein distance.
inline int edit_distance(std::span<const int> hyp, std::span<const int> ref) {
  std::vector<int> prev(ref.size() + 1), cur(ref.size() + 1);
  for (size_t j = 0; j <= ref.size(); ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= hyp.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= ref.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[ref.size()];
}

struct PathResult {
  std::vector<int> labels;
  double score = kNegInf;
};

/// Highest-scoring start -> end path (sum of arc weights). Ties keep the
/// earliest arc in arc order.
inline PathResult best_path(const Lattice& lat) {
  auto order = lat.topological_order();
  if (!order) throw LatticeError("best_path: lattice has a cycle");
  const auto n = static_cast<size_t>(lat.num_nodes());
  std::vector<double> best(n, kNegInf);
  std::vector<long> back(n, -1);
  best[static_cast<size_t>(lat.start())] = 0.0;
  auto out = lat.out_arcs();
  for (int node : *order) {
    const double b = best[static_cast<size_t>(node)];
    if (b == kNegInf) continue;
    for (size_t ai : out[static_cast<size_t>(node)]) {
      const Arc& a = lat.arcs()[ai];
      const double v = b + a.weight;
      if (v > best[static_cast<size_t>(a.dst)]) {
        best[static_cast<size_t>(a.dst)] = v;
        back[static_cast<size_t>(a.dst)] = static_cast<long>(ai);
      }
    }
  }
  PathResult r;
  r.score = best[static_cast<size_t>(lat.end())];
  if (r.score == kNegInf) throw LatticeError("best_path: end node unreachable");
  for (long ai = back[static_cast<size_t>(lat.end())]; ai >= 0;) {
    const Arc& a = lat.arcs()[static_cast<size_t>(ai)];
    if (a.label != kFinalLabel) r.labels.push_back(a.label);
    ai = back[static_cast<size_t>(a.src)];
  }
  std::reverse(r.labels.begin(), r.labels.end());
  return r;
}

struct OracleResult {
  int errors = 0;
  double wer = 0.0;
  std::vector<int> path;
};

/// Minimum edit distance between the reference and any complete path, via
/// DP over (node in topological order) x (reference position).
inline OracleResult oracle_wer(const Lattice& lat, std::span<const int> ref) {
  require(!ref.empty(), "oracle_wer: empty reference");
  auto order = lat.topological_order();
  if (!order) throw LatticeError("oracle_wer: lattice has a cycle");
  const size_t R = ref.size();
  const auto n = static_cast<size_t>(lat.num_nodes());
  constexpr int kInf = 1 << 29;
  // cost[node][j]: fewest edits turning some start->node path into ref[0, j)
  std::vector<std::vector<int>> cost(n, std::vector<int>(R + 1, kInf));
  // back-pointer: (arc index or -1 for in-node deletion, previous j)
  struct Back {
    long arc = -2;
    size_t j = 0;
  };
  std::vector<std::vector<Back>> back(n, std::vector<Back>(R + 1));
  auto in = lat.in_arcs();
  for (int node : *order) {
    auto& c = cost[static_cast<size_t>(node)];
    auto& bk = back[static_cast<size_t>(node)];
    if (node == lat.start()) {
      c[0] = 0;
      bk[0] = {-2, 0};
    }
    for (size_t ai : in[static_cast<size_t>(node)]) {
      const Arc& a = lat.arcs()[ai];
      const auto& pc = cost[static_cast<size_t>(a.src)];
      for (size_t j = 0; j <= R; ++j) {
        if (pc[j] >= kInf) continue;
        if (a.label == kFinalLabel) {
          if (pc[j] < c[j]) c[j] = pc[j], bk[j] = {static_cast<long>(ai), j};
          continue;
        }
        if (pc[j] + 1 < c[j]) c[j] = pc[j] + 1, bk[j] = {static_cast<long>(ai), j};  // insertion
        if (j < R) {
          const int v = pc[j] + (a.label == ref[j] ? 0 : 1);
          if (v < c[j + 1]) c[j + 1] = v, bk[j + 1] = {static_cast<long>(ai), j};
        }
      }
    }
    for (size_t j = 1; j <= R; ++j)  // deletion of ref[j - 1]
      if (c[j - 1] + 1 < c[j]) c[j] = c[j - 1] + 1, bk[j] = {-1, j - 1};
  }
  OracleResult r;
  const auto e = static_cast<size_t>(lat.end());
  if (cost[e][R] >= kInf) throw LatticeError("oracle_wer: end node unreachable");
  r.errors = cost[e][R];
  r.wer = static_cast<double>(r.errors) / static_cast<double>(R);
  size_t node = e, j = R;
  while (!(node == static_cast<size_t>(lat.start()) && back[node][j].arc == -2)) {
    const Back b = back[node][j];
    if (b.arc == -1) {
      j = b.j;
      continue;
    }
    const Arc& a = lat.arcs()[static_cast<size_t>(b.arc)];
    if (a.label != kFinalLabel) r.path.push_back(a.label);
    node = static_cast<size_t>(a.src);
    j = b.j;
  }
  std::reverse(r.path.begin(), r.path.end());
  return r;
}

// ---------------------------------------------------------------------------
// Pruning
// ---------------------------------------------------------------------------

/// Within every group of parallel arcs (same source and target) keep the arcs
/// whose weight is within margin * |lowest weight in the group| of the best
/// one, then remove nodes left without a complete path.
inline Lattice prune_lattice(const Lattice& lat, double relative_margin) {
  require(relative_margin >= 0.0, "prune_lattice: margin must be non-negative");
  std::map<std::pair<int, int>, std::pair<double, double>> range;  // (max, min)
  for (const Arc& a : lat.arcs()) {
    auto [it, fresh] = range.try_emplace({a.src, a.dst}, a.weight, a.weight);
    if (!fresh) {
      it->second.first = std::max(it->second.first, a.weight);
      it->second.second = std::min(it->second.second, a.weight);
    }
  }
  Lattice out = lat;
  out.remove_arc_if([&](const Arc& a) {
    const auto& [mx, mn] = range.at({a.src, a.dst});
    return a.weight < mx - relative_margin * std::abs(mn);
  });
  out.trim();
  return out;
}

// ---------------------------------------------------------------------------
// N-best
// ---------------------------------------------------------------------------

struct NBestEntry {
  std::vector<int> labels;
  double acoustic = 0.0;
  std::optional<double> lm;
  double combined = 0.0;
};

/// Best-first enumeration of complete paths (A* with the exact best
/// completion score as heuristic), keeping the first and therefore best path
/// of each distinct label sequence.
inline std::vector<NBestEntry> extract_nbest(const Lattice& lat, size_t n, size_t max_expansions = 2000000) {
  require(n >= 1, "extract_nbest: N must be >= 1");
  auto order = lat.topological_order();
  if (!order) throw LatticeError("extract_nbest: lattice has a cycle");
  const auto nn = static_cast<size_t>(lat.num_nodes());
  std::vector<double> to_end(nn, kNegInf);
  to_end[static_cast<size_t>(lat.end())] = 0.0;
  auto out = lat.out_arcs();
  for (auto it = order->rbegin(); it != order->rend(); ++it)
    for (size_t ai : out[static_cast<size_t>(*it)]) {
      const Arc& a = lat.arcs()[ai];
      to_end[static_cast<size_t>(*it)] =
          std::max(to_end[static_cast<size_t>(*it)], a.weight + to_end[static_cast<size_t>(a.dst)]);
    }
  struct Partial {
    long parent;
    int label;
  };
  std::vector<Partial> partials;
  struct Item {
    double f, g;
    int node;
    long partial;
    size_t seq;
  };
  auto worse = [](const Item& a, const Item& b) { return a.f != b.f ? a.f < b.f : a.seq > b.seq; };
  std::priority_queue<Item, std::vector<Item>, decltype(worse)> pq(worse);
  size_t seq = 0;
  if (to_end[static_cast<size_t>(lat.start())] == kNegInf) return {};
  pq.push({to_end[static_cast<size_t>(lat.start())], 0.0, lat.start(), -1, seq++});
  std::vector<NBestEntry> result;
  std::set<std::vector<int>> seen;
  size_t expansions = 0;
  while (!pq.empty() && result.size() < n && expansions < max_expansions) {
    Item it = pq.top();
    pq.pop();
    ++expansions;
    if (it.node == lat.end()) {
      std::vector<int> labels;
      for (long p = it.partial; p >= 0; p = partials[static_cast<size_t>(p)].parent)
        if (partials[static_cast<size_t>(p)].label != kFinalLabel) labels.push_back(partials[static_cast<size_t>(p)].label);
      std::reverse(labels.begin(), labels.end());
      if (seen.insert(labels).second) result.push_back({labels, it.g, std::nullopt, it.g});
      continue;
    }
    for (size_t ai : out[static_cast<size_t>(it.node)]) {
      const Arc& a = lat.arcs()[ai];
      const double rest = to_end[static_cast<size_t>(a.dst)];
      if (rest == kNegInf) continue;
      partials.push_back({it.partial, a.label});
      const double g = it.g + a.weight;
      pq.push({g + rest, g, a.dst, static_cast<long>(partials.size() - 1), seq++});
    }
  }
  return result;
}

/// All complete paths by depth-first enumeration (test oracle; refuses to
/// enumerate more than `limit` paths).
inline std::vector<PathResult> enumerate_paths(const Lattice& lat, size_t limit = 10000) {
  auto out = lat.out_arcs();
  std::vector<PathResult> paths;
  std::vector<int> labels;
  std::function<void(int, double)> dfs = [&](int node, double acc) {
    if (node == lat.end()) {
      if (paths.size() >= limit) throw LatticeError("enumerate_paths: more than " + std::to_string(limit) + " paths");
      paths.push_back({labels, acc});
      return;
    }
    for (size_t ai : out[static_cast<size_t>(node)]) {
      const Arc& a = lat.arcs()[ai];
      if (a.label != kFinalLabel) labels.push_back(a.label);
      dfs(a.dst, acc + a.weight);
      if (a.label != kFinalLabel) labels.pop_back();
    }
  };
  dfs(lat.start(), 0.0);
  return paths;
}

/// Number of complete paths (saturating at `cap`).
inline double count_paths(const Lattice& lat, double cap = 1e18) {
  auto order = lat.topological_order();
  if (!order) throw LatticeError("count_paths: lattice has a cycle");
  std::vector<double> cnt(static_cast<size_t>(lat.num_nodes()), 0.0);
  cnt[static_cast<size_t>(lat.start())] = 1.0;
  auto out = lat.out_arcs();
  for (int node : *order)
    for (size_t ai : out[static_cast<size_t>(node)]) {
      auto& c = cnt[static_cast<size_t>(lat.arcs()[ai].dst)];
      c = std::min(cap, c + cnt[static_cast<size_t>(node)]);
    }
  return cnt[static_cast<size_t>(lat.end())];
}

// ---------------------------------------------------------------------------
// Text format
//
//   vqt-lattice 1 frames <T> vocab <checksum hex16> nodes <N> arcs <A>
//   <src> <dst> <label> <cost>      one line per arc, cost = -weight, %.9g
//   node <end-node> final
// ---------------------------------------------------------------------------

inline void write_lattice(std::ostream& os, const Lattice& lat) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "vqt-lattice 1 frames %d vocab %016llx nodes %d arcs %zu\n", lat.frames(),
                static_cast<unsigned long long>(lat.vocab_checksum()), lat.num_nodes(), lat.arcs().size());
  os << buf;
  for (const Arc& a : lat.arcs()) {
    std::snprintf(buf, sizeof buf, "%d %d %d %.9g\n", a.src, a.dst, a.label, -a.weight + 0.0);
    os << buf;
  }
  os << "node " << lat.end() << " final\n";
}

inline Lattice read_lattice(std::istream& is) {
  std::string line, magic, k1, k2, k3, k4;
  int version = 0, frames = 0, nodes = 0;
  size_t narcs = 0;
  std::string checksum;
  if (!std::getline(is, line)) throw LatticeError("lattice: empty input");
  std::istringstream hs(line);
  if (!(hs >> magic >> version >> k1 >> frames >> k2 >> checksum >> k3 >> nodes >> k4 >> narcs) ||
      magic != "vqt-lattice" || version != 1 || k1 != "frames" || k2 != "vocab" || k3 != "nodes" || k4 != "arcs")
    throw LatticeError("lattice: bad header: " + line);
  std::vector<Arc> arcs;
  arcs.reserve(narcs);
  for (size_t i = 0; i < narcs; ++i) {
    if (!std::getline(is, line)) throw LatticeError("lattice: truncated arc list");
    std::istringstream as(line);
    Arc a;
    std::string cost;
    if (!(as >> a.src >> a.dst >> a.label >> cost)) throw LatticeError("lattice: bad arc line: " + line);
    a.weight = -std::strtod(cost.c_str(), nullptr);
    arcs.push_back(a);
  }
  if (!std::getline(is, line) || line != "node 1 final") throw LatticeError("lattice: missing final line");
  return Lattice::from_arcs(nodes, std::move(arcs), frames, std::stoull(checksum, nullptr, 16));
}

inline std::string lattice_to_string(const Lattice& lat) {
  std::ostringstream os;
  write_lattice(os, lat);
  return os.str();
}

inline Lattice lattice_from_string(const std::string& s) {
  std::istringstream is(s);
  return read_lattice(is);
}

}  // namespace vqt
