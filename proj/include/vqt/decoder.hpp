// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The VQT Authors.
//
// Alignment-length synchronous beam search with hypothesis merging and
// lattice construction.
//
// Every step extends each active hypothesis by a blank (advance one frame)
// or by one label. Candidates with identical label sequences are always
// combined (log-sum of scores); the merge strategy may then combine distinct
// label sequences whose prediction-network states are deemed equivalent. A
// merged group continues as its highest-scoring member, with the summed
// score. Hypotheses that consume the last frame become final.
//
// Lattice weights are chosen so that the best lattice path into any node
// scores exactly the running score of the hypothesis that created it. The
// lattice 1-best therefore coincides with the decoder 1-best. Each hypothesis
// sits on a node plus a pending score that has not been written to an arc yet
// (the blank steps taken since the node was created).

#pragma once

#include "vqt/lattice.hpp"
#include "vqt/model.hpp"

#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace vqt {

enum class MergeKind { kNone, kSameLabelSequence, kLimitedContext, kVqState };

struct MergeStrategy {
  MergeKind kind = MergeKind::kNone;
  int context = 2;            // limited_context: number of trailing labels compared
  bool include_length = true;  // key also includes the label count u

  static MergeStrategy none() { return {}; }
  static MergeStrategy same_label_sequence() { return {MergeKind::kSameLabelSequence, 0, true}; }
  static MergeStrategy limited_context(int k) { return {MergeKind::kLimitedContext, k, true}; }
  static MergeStrategy vq_state() { return {MergeKind::kVqState, 0, true}; }
};

inline std::string to_string(const MergeStrategy& s) {
  switch (s.kind) {
    case MergeKind::kNone: return "none";
    case MergeKind::kSameLabelSequence: return "same_label_sequence";
    case MergeKind::kLimitedContext: return "limited_context(" + std::to_string(s.context) + ")";
    case MergeKind::kVqState: return "vq_state";
  }
  return "?";
}

/// Accepts none | same_label_sequence | limited_context | limited_context:<k> | vq_state.
inline MergeStrategy parse_strategy(const std::string& s) {
  if (s == "none") return MergeStrategy::none();
  if (s == "same_label_sequence") return MergeStrategy::same_label_sequence();
  if (s == "vq_state") return MergeStrategy::vq_state();
  if (s == "limited_context") return MergeStrategy::limited_context(2);
  if (s.rfind("limited_context:", 0) == 0) {
    const int k = std::stoi(s.substr(16));
    require(k >= 1, "merge strategy: context must be >= 1");
    return MergeStrategy::limited_context(k);
  }
  throw ContractViolation("unknown merge strategy '" + s + "'");
}

/// vq_state needs a quantized prediction network; the VLC net only fits the
/// limited-context key matching its window.
inline void check_compatible(const Model& model, const MergeStrategy& s) {
  if (s.kind == MergeKind::kVqState && !model.is_vq())
    throw ContractViolation("merge strategy vq_state requires the vq prediction network");
  if (model.config.variant == PredVariant::kVlc && s.kind != MergeKind::kLimitedContext)
    throw ContractViolation("the vlc prediction network requires merge strategy limited_context");
}

struct DecodeConfig {
  int beam = 4;
  double max_label_ratio = 1.0;  // U_max = ceil(ratio * T)
  MergeStrategy strategy;
  bool build_lattice = true;
};

struct FinalHypothesis {
  std::vector<int> labels;
  double score = kNegInf;
};

struct DecodeStats {
  int steps = 0;
  size_t merged_groups = 0;     // groups that combined distinct label sequences
  size_t merged_sequences = 0;  // distinct sequences absorbed into another
  size_t pred_steps = 0;
  size_t pred_cache_hits = 0;
};

struct DecodeResult {
  std::vector<FinalHypothesis> nbest;  // best first
  Lattice lattice;
  DecodeStats stats;
};

namespace detail {

struct Hyp {
  std::vector<int> labels;
  PredOutput pred;
  Vec pred_proj;
  double score = 0.0;
  int t = 0;
  int node = 0;
  double pending = 0.0;  // score = node_value[node] + pending
};

// One extension of an active hypothesis.
struct Leaf {
  int parent;
  int label;  // 0 = blank
  double score;
};

// Extensions sharing one label sequence.
struct SeqGroup {
  std::vector<int> labels;
  int t = 0;
  std::vector<Leaf> leaves;
  size_t rep = 0;  // leaf index with the highest score
  double score = kNegInf;
  const PredOutput* pred = nullptr;
  PredOutput owned;
};

// Sequence groups merged by the strategy key.
struct MergeGroup {
  std::vector<size_t> members;  // indices into the sequence-group list
  size_t rep = 0;               // member position of the representative
  double score = kNegInf;
};

// Ordering shared by representative choice and beam pruning: higher score,
// then fewer labels, then lexicographically smaller labels.
inline bool better(double sa, const std::vector<int>& la, double sb, const std::vector<int>& lb) {
  if (sa != sb) return sa > sb;
  if (la.size() != lb.size()) return la.size() < lb.size();
  return la < lb;
}

class LatticeBuilder {
 public:
  explicit LatticeBuilder(bool enabled) : enabled_(enabled) { value_ = {0.0, kNegInf}; in_.resize(2); }

  bool enabled() const { return enabled_; }
  double value(int node) const { return value_[static_cast<size_t>(node)]; }

  int add_node(double v) {
    const int n = lat_.add_node();
    value_.push_back(v);
    in_.emplace_back();
    return n;
  }

  void add_arc(int src, int dst, int label, double w) {
    const size_t idx = lat_.add_arc(src, dst, label, w);
    in_[static_cast<size_t>(dst)].push_back(idx);
  }

  // Routes the paths that reach `via` into `dst`, shifted so the best of
  // them arrives with score `target`.
  void copy_in_arcs(int via, int dst, double target) {
    const double shift = target - value(via);
    const std::vector<size_t> in = in_[static_cast<size_t>(via)];
    if (in.empty()) throw LatticeError("lattice: cannot reroute paths through the start node");
    for (size_t ai : in) {
      const Arc a = lat_.arcs()[ai];
      add_arc(a.src, dst, a.label, a.weight + shift);
    }
  }

  Lattice finish(int frames, uint64_t checksum) {
    lat_.set_frames(frames);
    lat_.set_vocab_checksum(checksum);
    lat_.trim();
    return std::move(lat_);
  }

 private:
  bool enabled_;
  Lattice lat_;
  std::vector<double> value_;
  std::vector<std::vector<size_t>> in_;
};

}  // namespace detail

/// Beam search over precomputed encoder output `enc` (T x D_enc).
inline DecodeResult decode_encoded(const Model& model, const Mat& enc, const DecodeConfig& cfg) {
  using namespace detail;
  require(cfg.beam >= 1, "decode: beam must be >= 1");
  require(cfg.max_label_ratio >= 0.0, "decode: max_label_ratio must be non-negative");
  check_compatible(model, cfg.strategy);
  const int T = static_cast<int>(enc.rows());
  if (T == 0) throw ContractViolation("decode: utterance has no frames");
  const int K = model.vocab.num_labels();
  const int umax = static_cast<int>(std::ceil(cfg.max_label_ratio * T - 1e-9));
  const MergeStrategy& strat = cfg.strategy;

  Mat enc_proj(T, model.config.joint_dim);
  for (int t = 0; t < T; ++t) enc_proj.row(t) = model.joint_net.enc_proj.apply(enc.row(t).transpose()).transpose();

  DecodeResult result;
  LatticeBuilder lb(cfg.build_lattice);
  std::map<std::pair<std::vector<int>, int>, PredOutput> vq_memo;

  std::vector<Hyp> beam(1);
  beam[0].pred = model.pred_initial();
  beam[0].pred_proj = model.joint_net.pred_proj.apply(beam[0].pred.g);
  std::vector<FinalHypothesis> finals;
  std::vector<int> final_nodes;
  std::vector<double> final_pending_base;

  auto materialize = [&](SeqGroup& g) {
    if (g.pred) return;
    const Leaf& r = g.leaves[g.rep];
    const Hyp& parent = beam[static_cast<size_t>(r.parent)];
    if (r.label == 0) {
      g.pred = &parent.pred;
      return;
    }
    if (model.is_vq()) {
      auto key = std::make_pair(parent.pred.state.code, r.label);
      auto it = vq_memo.find(key);
      if (it != vq_memo.end()) {
        ++result.stats.pred_cache_hits;
        g.pred = &it->second;
        return;
      }
      ++result.stats.pred_steps;
      g.pred = &vq_memo.emplace(std::move(key), model.pred_step(parent.pred.state, r.label)).first->second;
      return;
    }
    ++result.stats.pred_steps;
    g.owned = model.pred_step(parent.pred.state, r.label);
    g.pred = &g.owned;
  };

  for (int step = 1; step <= T + umax && !beam.empty(); ++step) {
    result.stats.steps = step;
    // expand and combine identical label sequences
    std::vector<SeqGroup> seqs, done;
    std::map<std::vector<int>, size_t> seq_index, done_index;
    auto add_leaf = [](std::vector<SeqGroup>& list, std::map<std::vector<int>, size_t>& index,
                       std::vector<int> labels, int t, Leaf leaf) {
      auto [it, fresh] = index.try_emplace(labels, list.size());
      if (fresh) {
        list.emplace_back();
        list.back().labels = std::move(labels);
        list.back().t = t;
      }
      SeqGroup& g = list[it->second];
      g.leaves.push_back(leaf);
      g.score = log_add(g.score, leaf.score);
      if (leaf.score > g.leaves[g.rep].score) g.rep = g.leaves.size() - 1;
    };
    for (size_t bi = 0; bi < beam.size(); ++bi) {
      const Hyp& h = beam[bi];
      const Vec lp = model.joint_net.from_projections(enc_proj.row(h.t).transpose(), h.pred_proj);
      const int p = static_cast<int>(bi);
      if (h.t + 1 == T)
        add_leaf(done, done_index, h.labels, T, {p, 0, h.score + lp(0)});
      else
        add_leaf(seqs, seq_index, h.labels, h.t + 1, {p, 0, h.score + lp(0)});
      if (static_cast<int>(h.labels.size()) < umax) {
        for (int k = 1; k <= K; ++k) {
          std::vector<int> ext = h.labels;
          ext.push_back(k);
          add_leaf(seqs, seq_index, std::move(ext), h.t, {p, k, h.score + lp(k)});
        }
      }
    }

    // strategy merge
    std::vector<MergeGroup> groups;
    if (strat.kind == MergeKind::kNone || strat.kind == MergeKind::kSameLabelSequence) {
      for (size_t i = 0; i < seqs.size(); ++i) groups.push_back({{i}, 0, seqs[i].score});
    } else {
      std::map<std::vector<int>, size_t> key_index;
      for (size_t i = 0; i < seqs.size(); ++i) {
        SeqGroup& g = seqs[i];
        std::vector<int> key;
        const int u = static_cast<int>(g.labels.size());
        if (strat.kind == MergeKind::kLimitedContext) {
          for (int j = u - strat.context; j < u; ++j) key.push_back(j >= 0 ? g.labels[static_cast<size_t>(j)] : -1);
          if (strat.include_length) key.push_back(u);
        } else {
          materialize(g);
          key = g.pred->state.code;
          // the start state is not a product of the prediction network, so
          // without the length component it only matches itself
          key.push_back(strat.include_length ? u : (u == 0 ? 1 : 0));
        }
        auto [it, fresh] = key_index.try_emplace(std::move(key), groups.size());
        if (fresh) groups.push_back({});
        groups[it->second].members.push_back(i);
      }
      for (MergeGroup& mg : groups) {
        for (size_t m = 0; m < mg.members.size(); ++m) {
          const SeqGroup& g = seqs[mg.members[m]];
          mg.score = log_add(mg.score, g.score);
          const SeqGroup& r = seqs[mg.members[mg.rep]];
          if (better(g.score, g.labels, r.score, r.labels)) mg.rep = m;
        }
        if (mg.members.size() > 1) {
          ++result.stats.merged_groups;
          result.stats.merged_sequences += mg.members.size() - 1;
        }
      }
    }

    // beam pruning
    std::vector<size_t> order(groups.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto rep_of = [&](size_t gi) -> const SeqGroup& { return seqs[groups[gi].members[groups[gi].rep]]; };
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return better(groups[a].score, rep_of(a).labels, groups[b].score, rep_of(b).labels);
    });
    if (order.size() > static_cast<size_t>(cfg.beam)) order.resize(static_cast<size_t>(cfg.beam));

    // finals
    for (SeqGroup& g : done) {
      const Leaf& r = g.leaves[g.rep];
      const Hyp& parent = beam[static_cast<size_t>(r.parent)];
      if (lb.enabled()) lb.add_arc(parent.node, 1, kFinalLabel, g.score - lb.value(parent.node));
      finals.push_back({g.labels, g.score});
    }

    // survivors become the next beam
    std::vector<Hyp> next;
    next.reserve(order.size());
    for (size_t gi : order) {
      MergeGroup& mg = groups[gi];
      SeqGroup& rep = seqs[mg.members[mg.rep]];
      materialize(rep);
      const Leaf& rl = rep.leaves[rep.rep];
      const Hyp& rparent = beam[static_cast<size_t>(rl.parent)];
      Hyp h;
      h.labels = rep.labels;
      h.t = rep.t;
      h.score = mg.score;
      h.pred = *rep.pred;
      h.pred_proj = rl.label == 0 ? rparent.pred_proj : model.joint_net.pred_proj.apply(h.pred.g);
      if (lb.enabled()) {
        if (mg.members.size() == 1 && rl.label == 0) {
          h.node = rparent.node;
          h.pending = h.score - lb.value(h.node);
        } else {
          h.node = lb.add_node(h.score);
          for (size_t m = 0; m < mg.members.size(); ++m) {
            const SeqGroup& g = seqs[mg.members[m]];
            const Leaf& leaf = g.leaves[g.rep];
            const double target = m == mg.rep ? mg.score : g.score;
            const int src = beam[static_cast<size_t>(leaf.parent)].node;
            if (leaf.label != 0)
              lb.add_arc(src, h.node, leaf.label, target - lb.value(src));
            else
              lb.copy_in_arcs(src, h.node, target);
          }
        }
      }
      next.push_back(std::move(h));
    }
    beam = std::move(next);
  }

  if (finals.empty()) throw RuntimeFailure("decode: no hypothesis reached the last frame");
  std::stable_sort(finals.begin(), finals.end(), [](const FinalHypothesis& a, const FinalHypothesis& b) {
    return better(a.score, a.labels, b.score, b.labels);
  });
  result.nbest = std::move(finals);
  if (lb.enabled()) result.lattice = lb.finish(T, model.vocab.checksum());
  return result;
}

inline DecodeResult decode(const Model& model, const Mat& features, const DecodeConfig& cfg) {
  return decode_encoded(model, encode(model, features), cfg);
}

}  // namespace vqt
