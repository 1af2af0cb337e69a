// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The VQT Authors.
//
// Synthetic transduction task and the dataset container / text format.

#pragma once

#include "vqt/model.hpp"
#include "vqt/numerics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace vqt {

struct Utterance {
  std::string id;
  Mat features;             // T x F
  std::vector<int> labels;  // label ids, no blanks
};

struct Dataset {
  Vocabulary vocab;
  int feat_dim = 0;
  std::vector<Utterance> utterances;

  size_t size() const { return utterances.size(); }
};

/// Each label is rendered as r frames of its prototype plus Gaussian noise.
/// The prototype is the label one-hot in dims [0, K) and a segment-parity
/// marker (1 for odd-numbered segments) in dims [K, F); the marker keeps
/// repeated labels separable.
struct SynthTask {
  int num_labels = 8;
  int min_len = 2, max_len = 12;
  int min_frames = 2, max_frames = 4;
  int feat_dim = 16;
  double noise = 0.3;
  uint64_t seed = 1;

  void validate() const {
    require(num_labels >= 1 && num_labels <= 26, "SynthTask: num_labels must be in [1, 26]");
    require(min_len >= 1 && max_len >= min_len, "SynthTask: bad label length range");
    require(min_frames >= 1 && max_frames >= min_frames, "SynthTask: bad frames-per-label range");
    require(feat_dim >= num_labels + 1, "SynthTask: feat_dim must exceed num_labels");
    require(noise >= 0.0, "SynthTask: noise must be non-negative");
  }
};

inline uint64_t split_stream(const std::string& split) {
  if (split == "train") return 1;
  if (split == "dev") return 2;
  if (split == "test") return 3;
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : split) h = (h ^ c) * 0x100000001b3ULL;
  return h | (1ULL << 63);
}

inline Utterance generate_utterance(const SynthTask& task, uint64_t utt_seed, std::string id) {
  SeededRng rng(utt_seed);
  Utterance u;
  u.id = std::move(id);
  const auto len = static_cast<int>(rng.uniform_int(task.min_len, task.max_len));
  std::vector<int> frames;
  for (int i = 0; i < len; ++i) {
    u.labels.push_back(static_cast<int>(rng.uniform_int(1, task.num_labels)));
    frames.push_back(static_cast<int>(rng.uniform_int(task.min_frames, task.max_frames)));
  }
  int T = 0;
  for (int r : frames) T += r;
  u.features = Mat::Zero(T, task.feat_dim);
  int t = 0;
  for (int i = 0; i < len; ++i) {
    for (int r = 0; r < frames[static_cast<size_t>(i)]; ++r, ++t) {
      u.features(t, u.labels[static_cast<size_t>(i)] - 1) = 1.0;
      if (i % 2 == 1)
        for (int d = task.num_labels; d < task.feat_dim; ++d) u.features(t, d) = 1.0;
    }
  }
  if (task.noise > 0.0)
    for (int r = 0; r < T; ++r)
      for (int d = 0; d < task.feat_dim; ++d) u.features(r, d) += task.noise * rng.normal();
  return u;
}

/// Deterministic given (task.seed, split); splits draw from disjoint streams.
inline Dataset generate(const SynthTask& task, int count, const std::string& split) {
  task.validate();
  require(count >= 1, "generate: count must be >= 1");
  Dataset ds;
  ds.vocab = Vocabulary::letters(task.num_labels);
  ds.feat_dim = task.feat_dim;
  const uint64_t split_seed = derive_seed(task.seed, split_stream(split));
  ds.utterances.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    char id[64];
    std::snprintf(id, sizeof id, "%s-%05d", split.c_str(), i);
    ds.utterances.push_back(generate_utterance(task, derive_seed(split_seed, static_cast<uint64_t>(i)), id));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Text format
//
//   vqt-dataset 1
//   feat_dim F
//   vocab a b c ...
//   utterances N
//   utt <id> frames <T> labels <sym> <sym> ...
//   <T lines of F numbers, %.17g>
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_dataset(std::ostream& os, const Dataset& ds) {
  os << "vqt-dataset 1\n";
  os << "feat_dim " << ds.feat_dim << "\n";
  os << "vocab";
  for (const auto& s : ds.vocab.symbols()) os << ' ' << s;
  os << "\nutterances " << ds.utterances.size() << "\n";
  for (const auto& u : ds.utterances) {
    os << "utt " << u.id << " frames " << u.features.rows() << " labels";
    for (int y : u.labels) os << ' ' << ds.vocab.symbol(y);
    os << '\n';
    for (Eigen::Index t = 0; t < u.features.rows(); ++t) {
      for (Eigen::Index d = 0; d < u.features.cols(); ++d) {
        if (d) os << ' ';
        os << format_double(u.features(t, d));
      }
      os << '\n';
    }
  }
}

inline Dataset read_dataset(std::istream& is) {
  auto fail = [](const std::string& what) { throw RuntimeFailure("dataset: " + what); };
  std::string line, word;
  Dataset ds;
  if (!std::getline(is, line) || line != "vqt-dataset 1") fail("missing or unsupported header");
  if (!std::getline(is, line)) fail("truncated");
  {
    std::istringstream ss(line);
    if (!(ss >> word >> ds.feat_dim) || word != "feat_dim") fail("expected feat_dim");
  }
  if (!std::getline(is, line)) fail("truncated");
  {
    std::istringstream ss(line);
    ss >> word;
    if (word != "vocab") fail("expected vocab");
    std::vector<std::string> syms;
    while (ss >> word) syms.push_back(word);
    ds.vocab = Vocabulary(std::move(syms));
  }
  size_t n = 0;
  if (!std::getline(is, line)) fail("truncated");
  {
    std::istringstream ss(line);
    if (!(ss >> word >> n) || word != "utterances") fail("expected utterances");
  }
  ds.utterances.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    if (!std::getline(is, line)) fail("truncated at utterance " + std::to_string(i));
    std::istringstream ss(line);
    Utterance u;
    long frames = 0;
    std::string kw1, kw2, kw3;
    if (!(ss >> kw1 >> u.id >> kw2 >> frames >> kw3) || kw1 != "utt" || kw2 != "frames" || kw3 != "labels")
      fail("bad utterance header: " + line);
    while (ss >> word) u.labels.push_back(ds.vocab.id(word));
    u.features.resize(frames, ds.feat_dim);
    for (long t = 0; t < frames; ++t) {
      if (!std::getline(is, line)) fail("truncated features in " + u.id);
      std::istringstream fs(line);
      for (int d = 0; d < ds.feat_dim; ++d) {
        if (!(fs >> word)) fail("short feature row in " + u.id);
        u.features(t, d) = std::strtod(word.c_str(), nullptr);
      }
    }
    ds.utterances.push_back(std::move(u));
  }
  return ds;
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeFailure("cannot write " + path);
  write_dataset(os, ds);
  if (!os) throw RuntimeFailure("write failed: " + path);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeFailure("cannot read " + path);
  return read_dataset(is);
}

}  // namespace vqt
