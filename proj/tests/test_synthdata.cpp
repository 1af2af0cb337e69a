// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The VQT Authors.

#include "vqt/synthdata.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>

namespace vqt {
namespace {

std::string serialize(const Dataset& ds) {
  std::ostringstream os;
  write_dataset(os, ds);
  return os.str();
}

// Frame-wise argmax over the one-hot block; a change of label or of the
// parity marker starts a new segment.
std::vector<int> trivial_decode(const Mat& x, int K) {
  std::vector<int> out;
  int prev_label = -1, prev_parity = -1;
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    Eigen::Index k = 0;
    x.row(t).head(K).maxCoeff(&k);
    const int parity = x(t, K) > 0.5 ? 1 : 0;
    if (static_cast<int>(k) + 1 != prev_label || parity != prev_parity) out.push_back(static_cast<int>(k) + 1);
    prev_label = static_cast<int>(k) + 1;
    prev_parity = parity;
  }
  return out;
}

TEST(SynthData, NoiselessFeaturesAreExactPrototypes) {
  SynthTask task;
  task.noise = 0.0;
  const Dataset ds = generate(task, 200, "train");
  for (const Utterance& u : ds.utterances) {
    for (Eigen::Index t = 0; t < u.features.rows(); ++t) {
      double s = 0;
      for (int d = 0; d < task.num_labels; ++d) s += u.features(t, d);
      EXPECT_EQ(s, 1.0);
      for (int d = task.num_labels; d < task.feat_dim; ++d)
        EXPECT_TRUE(u.features(t, d) == 0.0 || u.features(t, d) == 1.0);
    }
    EXPECT_EQ(trivial_decode(u.features, task.num_labels), u.labels) << u.id;
  }
}

TEST(SynthData, SameSeedIsByteIdentical) {
  SynthTask task;
  EXPECT_EQ(serialize(generate(task, 50, "dev")), serialize(generate(task, 50, "dev")));
  SynthTask other = task;
  other.seed = 2;
  EXPECT_NE(serialize(generate(task, 50, "dev")), serialize(generate(other, 50, "dev")));
}

TEST(SynthData, LengthHistogramIsUniform) {
  SynthTask task;
  const Dataset ds = generate(task, 10000, "train");
  const int bins = task.max_len - task.min_len + 1;
  std::vector<int> hist(static_cast<size_t>(bins), 0);
  for (const Utterance& u : ds.utterances) {
    const int len = static_cast<int>(u.labels.size());
    ASSERT_GE(len, task.min_len);
    ASSERT_LE(len, task.max_len);
    ++hist[static_cast<size_t>(len - task.min_len)];
    const int T = static_cast<int>(u.features.rows());
    EXPECT_GE(T, len * task.min_frames);
    EXPECT_LE(T, len * task.max_frames);
  }
  // each bin's share within 5 points of uniform, and a chi-square fit at p = 0.001
  const double expect = 10000.0 / bins;
  double chi2 = 0;
  for (int h : hist) {
    EXPECT_NEAR(h / 10000.0, 1.0 / bins, 0.05);
    chi2 += (h - expect) * (h - expect) / expect;
  }
  ASSERT_EQ(bins, 11);
  EXPECT_LT(chi2, 29.59);  // 10 degrees of freedom
}

TEST(SynthData, SplitsDoNotCollide) {
  SynthTask task;
  std::set<std::string> seen;
  size_t total = 0;
  for (const std::string split : {"train", "dev", "test"}) {
    const Dataset ds = generate(task, 500, split);
    for (const Utterance& u : ds.utterances) {
      std::string key;
      for (Eigen::Index i = 0; i < u.features.size(); ++i) key += format_double(u.features.data()[i]) + ",";
      seen.insert(key);
      ++total;
    }
  }
  EXPECT_EQ(seen.size(), total);
}

TEST(SynthData, TextRoundTripIsExact) {
  SynthTask task;
  const Dataset ds = generate(task, 20, "test");
  const std::string text = serialize(ds);
  std::istringstream in(text);
  const Dataset back = read_dataset(in);
  ASSERT_EQ(back.size(), ds.size());
  for (size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.utterances[i].id, ds.utterances[i].id);
    EXPECT_EQ(back.utterances[i].labels, ds.utterances[i].labels);
    EXPECT_EQ(back.utterances[i].features, ds.utterances[i].features);
  }
  EXPECT_EQ(serialize(back), text);
}

TEST(SynthData, InvalidTasksAreRejected) {
  SynthTask task;
  task.feat_dim = task.num_labels;
  EXPECT_THROW(generate(task, 1, "train"), ContractViolation);
  task = SynthTask{};
  task.noise = -1;
  EXPECT_THROW(generate(task, 1, "train"), ContractViolation);
  EXPECT_THROW(generate(SynthTask{}, 0, "train"), ContractViolation);
  std::istringstream bad("vqt-dataset 2\n");
  EXPECT_THROW(read_dataset(bad), RuntimeFailure);
}

}  // namespace
}  // namespace vqt
