// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The VQT Authors.

#include "vqt/decoder.hpp"
#include "vqt/lattice.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <map>
#include <set>

namespace vqt {
namespace {

// Random DAG: interior nodes 2..n+1 in topological id order, label arcs
// between them, final arcs into the end node; trimmed to complete paths.
Lattice random_lattice(SeededRng& rng, int interior, int K, double arc_prob) {
  Lattice lat;
  for (int i = 0; i < interior; ++i) lat.add_node();
  auto w = [&] { return -3.0 * rng.uniform(); };
  for (int d = 2; d < 2 + interior; ++d) {
    lat.add_arc(0, d, static_cast<int>(rng.uniform_int(1, K)), w());
    for (int s = 2; s < d; ++s)
      if (rng.uniform() < arc_prob) lat.add_arc(s, d, static_cast<int>(rng.uniform_int(1, K)), w());
    if (rng.uniform() < 0.2) lat.add_arc(0, d, static_cast<int>(rng.uniform_int(1, K)), w());
  }
  for (int s = 2; s < 2 + interior; ++s)
    if (s == 1 + interior || rng.uniform() < 0.4) lat.add_arc(s, 1, kFinalLabel, w());
  lat.set_frames(interior);
  lat.trim();
  return lat;
}

// Independent Levenshtein: memoized recursion over suffixes.
int edit_distance_reference(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<std::pair<size_t, size_t>, int> memo;
  std::function<int(size_t, size_t)> go = [&](size_t i, size_t j) -> int {
    if (i == a.size()) return static_cast<int>(b.size() - j);
    if (j == b.size()) return static_cast<int>(a.size() - i);
    auto it = memo.find({i, j});
    if (it != memo.end()) return it->second;
    const int v = std::min({go(i + 1, j) + 1, go(i, j + 1) + 1, go(i + 1, j + 1) + (a[i] == b[j] ? 0 : 1)});
    memo[{i, j}] = v;
    return v;
  };
  return go(0, 0);
}

Lattice chain(const std::vector<int>& labels, double w = -0.5) {
  Lattice lat;
  int prev = lat.start();
  for (int y : labels) {
    const int n = lat.add_node();
    lat.add_arc(prev, n, y, w);
    prev = n;
  }
  lat.add_arc(prev, lat.end(), kFinalLabel, 0.0);
  lat.set_frames(static_cast<int>(labels.size()) + 1);
  return lat;
}

TEST(Density, CountsLabelArcsPerFrame) {
  Lattice lat;
  const int a = lat.add_node();
  for (int i = 0; i < 10; ++i) lat.add_arc(0, a, 1 + i % 3, -1.0);
  lat.add_arc(a, 1, kFinalLabel, 0.0);
  lat.set_frames(5);
  EXPECT_DOUBLE_EQ(density(lat), 2.0);
  Lattice none;
  EXPECT_THROW(density(none), ContractViolation);
}

TEST(Density, PrefixTreeCountsDistinctPrefixes) {
  Model m(testing::tiny_config(PredVariant::kLstm), Vocabulary::letters(3));
  m.init(3);
  SeededRng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const Mat x = testing::random_features(rng, 6, 5);
    DecodeConfig c;
    c.beam = 1 << trial;
    const DecodeResult r = decode(m, x, c);
    std::set<std::vector<int>> prefixes;
    for (const auto& f : r.nbest)
      for (size_t n = 1; n <= f.labels.size(); ++n) prefixes.insert({f.labels.begin(), f.labels.begin() + static_cast<long>(n)});
    EXPECT_EQ(r.lattice.label_arc_count(), prefixes.size());
    EXPECT_DOUBLE_EQ(density(r.lattice), static_cast<double>(prefixes.size()) / 6.0);
  }
}

TEST(EditDistance, Examples) {
  const std::vector<int> abc{1, 2, 3}, axc{1, 9, 3}, empty;
  EXPECT_EQ(edit_distance(abc, abc), 0);
  EXPECT_EQ(edit_distance(abc, axc), 1);
  EXPECT_EQ(edit_distance(empty, abc), 3);
  EXPECT_EQ(edit_distance(abc, empty), 3);
}

TEST(EditDistance, MatchesReferenceOnRandomPairs) {
  SeededRng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<int> a = testing::random_labels(rng, static_cast<int>(rng.uniform_int(0, 8)), 3);
    std::vector<int> b = testing::random_labels(rng, static_cast<int>(rng.uniform_int(0, 8)), 3);
    EXPECT_EQ(edit_distance(a, b), edit_distance_reference(a, b));
    EXPECT_EQ(edit_distance(a, b), edit_distance(b, a));
  }
}

TEST(OracleWer, SinglePathAndContainedReference) {
  const std::vector<int> ref{1, 2, 3, 1};
  const OracleResult one = oracle_wer(chain({1, 3, 3}), ref);
  EXPECT_EQ(one.errors, 2);
  EXPECT_DOUBLE_EQ(one.wer, 0.5);
  EXPECT_EQ(one.path, (std::vector<int>{1, 3, 3}));

  Lattice lat = chain({2, 2});
  int prev = lat.start();
  for (int y : ref) {
    const int n = lat.add_node();
    lat.add_arc(prev, n, y, -9.0);
    prev = n;
  }
  lat.add_arc(prev, lat.end(), kFinalLabel, 0.0);
  const OracleResult hit = oracle_wer(lat, ref);
  EXPECT_EQ(hit.errors, 0);
  EXPECT_EQ(hit.path, ref);
  EXPECT_THROW(oracle_wer(lat, std::vector<int>{}), ContractViolation);
}

TEST(OracleWer, MatchesPathEnumerationOnRandomLattices) {
  SeededRng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const Lattice lat = random_lattice(rng, 2 + trial % 9, 3, 0.3);
    const std::vector<int> ref = testing::random_labels(rng, static_cast<int>(rng.uniform_int(1, 6)), 3);
    const auto paths = enumerate_paths(lat);
    int best = 1 << 30;
    for (const auto& p : paths) best = std::min(best, edit_distance(p.labels, ref));
    const OracleResult r = oracle_wer(lat, ref);
    EXPECT_EQ(r.errors, best);
    EXPECT_EQ(edit_distance(r.path, ref), r.errors);
    bool on_lattice = false;
    for (const auto& p : paths) on_lattice |= p.labels == r.path;
    EXPECT_TRUE(on_lattice);
  }
}

TEST(BestPath, MatchesEnumeration) {
  SeededRng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const Lattice lat = random_lattice(rng, 2 + trial % 8, 3, 0.3);
    double best = kNegInf;
    for (const auto& p : enumerate_paths(lat)) best = std::max(best, p.score);
    EXPECT_NEAR(best_path(lat).score, best, 1e-12);
  }
}

TEST(Prune, ParallelArcMarginExample) {
  Lattice lat;
  const int a = lat.add_node();
  lat.add_arc(0, a, 1, -1.0);
  lat.add_arc(0, a, 2, -1.05);
  lat.add_arc(0, a, 3, -2.0);
  lat.add_arc(a, 1, kFinalLabel, 0.0);
  lat.set_frames(1);
  // margin 0.1 * |-2| = 0.2 below the best arc
  const Lattice p = prune_lattice(lat, 0.1);
  std::set<int> kept;
  for (const Arc& arc : p.arcs()) kept.insert(arc.label);
  EXPECT_EQ(kept, (std::set<int>{0, 1, 2}));
  EXPECT_EQ(prune_lattice(lat, 0.0).label_arc_count(), 1u);
  EXPECT_THROW(prune_lattice(lat, -0.1), ContractViolation);
}

TEST(Prune, PreservesBestPathAndValidity) {
  SeededRng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    Lattice lat = random_lattice(rng, 3 + trial % 7, 2, 0.5);
    // add parallel arcs so the margin has something to act on
    const std::vector<Arc> arcs = lat.arcs();
    for (const Arc& a : arcs)
      if (a.label != kFinalLabel && rng.uniform() < 0.5) lat.add_arc(a.src, a.dst, a.label % 2 + 1, a.weight - rng.uniform());
    const PathResult before = best_path(lat);
    const Lattice p = prune_lattice(lat, 0.1);
    EXPECT_TRUE(validate(p, 2).ok());
    const PathResult after = best_path(p);
    EXPECT_EQ(after.labels, before.labels);
    EXPECT_NEAR(after.score, before.score, 1e-12);
    EXPECT_LE(p.arcs().size(), lat.arcs().size());
  }
}

TEST(NBest, TopEntryIsBestPath) {
  SeededRng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const Lattice lat = random_lattice(rng, 2 + trial % 8, 3, 0.3);
    const auto nb = extract_nbest(lat, 1);
    ASSERT_EQ(nb.size(), 1u);
    const PathResult bp = best_path(lat);
    EXPECT_NEAR(nb[0].acoustic, bp.score, 1e-12);
  }
}

TEST(NBest, MatchesEnumerationOracle) {
  SeededRng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const Lattice lat = random_lattice(rng, 2 + trial % 9, 2, 0.4);
    std::map<std::vector<int>, double> best;
    for (const auto& p : enumerate_paths(lat)) {
      auto [it, fresh] = best.try_emplace(p.labels, p.score);
      if (!fresh) it->second = std::max(it->second, p.score);
    }
    const auto nb = extract_nbest(lat, 100000);
    ASSERT_EQ(nb.size(), best.size());
    for (size_t i = 0; i < nb.size(); ++i) {
      EXPECT_NEAR(nb[i].acoustic, best.at(nb[i].labels), 1e-12);
      EXPECT_EQ(nb[i].combined, nb[i].acoustic);
      EXPECT_FALSE(nb[i].lm.has_value());
      if (i) EXPECT_GE(nb[i - 1].acoustic, nb[i].acoustic);
    }
    const auto top3 = extract_nbest(lat, 3);
    ASSERT_EQ(top3.size(), std::min<size_t>(3, best.size()));
    for (size_t i = 0; i < top3.size(); ++i) EXPECT_NEAR(top3[i].acoustic, nb[i].acoustic, 1e-12);
  }
}

TEST(Validate, ReportsEachFailureKind) {
  EXPECT_TRUE(validate(chain({1, 2}), 2).ok());

  Lattice cyc = chain({1});
  cyc.add_arc(2, 2, 1, -1.0);
  EXPECT_FALSE(validate(cyc).acyclic);

  Lattice orphan = chain({1});
  const int o = orphan.add_node();
  orphan.add_arc(o, orphan.end(), kFinalLabel, 0.0);
  EXPECT_FALSE(validate(orphan).reachable);

  Lattice dead = chain({1});
  const int d = dead.add_node();
  dead.add_arc(dead.start(), d, 2, -1.0);
  const ValidationReport dr = validate(dead);
  EXPECT_FALSE(dr.coreachable);
  EXPECT_TRUE(dr.reachable);
  EXPECT_NE(dr.to_text().find("coreachable FAIL"), std::string::npos);

  Lattice nan = chain({1}, std::nan(""));
  EXPECT_FALSE(validate(nan).finite_weights);

  EXPECT_FALSE(validate(chain({3}), 2).labels_valid);
  Lattice eps = chain({1});
  const int e = eps.add_node();
  eps.add_arc(eps.start(), e, kFinalLabel, 0.0);
  eps.add_arc(e, eps.end(), kFinalLabel, 0.0);
  EXPECT_FALSE(validate(eps).labels_valid);

  EXPECT_THROW(chain({1}).add_arc(0, 99, 1, 0.0), LatticeError);
}

TEST(Serialization, RoundTripIsStable) {
  SeededRng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    Lattice lat = random_lattice(rng, 2 + trial % 8, 3, 0.3);
    lat.set_vocab_checksum(0x0123456789abcdefULL);
    const std::string text = lattice_to_string(lat);
    const Lattice back = lattice_from_string(text);
    EXPECT_EQ(lattice_to_string(back), text);
    EXPECT_EQ(back.num_nodes(), lat.num_nodes());
    EXPECT_EQ(back.frames(), lat.frames());
    EXPECT_EQ(back.vocab_checksum(), lat.vocab_checksum());
    ASSERT_EQ(back.arcs().size(), lat.arcs().size());
    for (size_t i = 0; i < lat.arcs().size(); ++i) {
      EXPECT_EQ(back.arcs()[i].label, lat.arcs()[i].label);
      EXPECT_NEAR(back.arcs()[i].weight, lat.arcs()[i].weight, 1e-8);
    }
    EXPECT_NEAR(best_path(back).score, best_path(lat).score, 1e-7);
  }
}

TEST(Serialization, MalformedInputIsRejected) {
  EXPECT_THROW(lattice_from_string(""), LatticeError);
  EXPECT_THROW(lattice_from_string("vqt-lattice 2 frames 1 vocab 0 nodes 2 arcs 0\nnode 1 final\n"), LatticeError);
  EXPECT_THROW(lattice_from_string("vqt-lattice 1 frames 1 vocab 0 nodes 2 arcs 1\n"), LatticeError);
  EXPECT_THROW(lattice_from_string("vqt-lattice 1 frames 1 vocab 0 nodes 2 arcs 1\n0 5 1 0.5\nnode 1 final\n"),
               LatticeError);
}

TEST(Trim, RenumbersSurvivorsInOrder) {
  Lattice lat;
  const int a = lat.add_node(), b = lat.add_node(), c = lat.add_node();
  lat.add_arc(0, a, 1, -1);
  lat.add_arc(0, b, 2, -1);  // b never reaches the end
  lat.add_arc(a, c, 1, -1);
  lat.add_arc(c, 1, kFinalLabel, 0);
  lat.trim();
  EXPECT_EQ(lat.num_nodes(), 4);
  EXPECT_EQ(lat.arcs().size(), 3u);
  EXPECT_TRUE(validate(lat).ok());
  EXPECT_EQ(count_paths(lat), 1.0);
}

TEST(CountPaths, MatchesEnumeration) {
  SeededRng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const Lattice lat = random_lattice(rng, 2 + trial % 8, 2, 0.4);
    EXPECT_EQ(count_paths(lat), static_cast<double>(enumerate_paths(lat).size()));
  }
}

}  // namespace
}  // namespace vqt
