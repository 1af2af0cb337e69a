// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The VQT Authors.
//
// End-to-end experiment plumbing behind the command-line tool: presets, data
// generation, training, decoding, evaluation sweeps and rescoring. Each cmd_*
// function reads and writes files; the in-memory pieces they are built from
// are exposed for the test suites.

#pragma once

#include "vqt/checkpoint.hpp"
#include "vqt/decoder.hpp"
#include "vqt/lattice.hpp"
#include "vqt/lm.hpp"
#include "vqt/synthdata.hpp"
#include "vqt/train.hpp"

#include <chrono>
#include <exception>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace vqt {

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

struct Preset {
  ModelConfig model;
  TrainConfig train;
  MergeStrategy strategy;
};

/// Toy-scale settings per prediction-network variant. The VLC net oscillates
/// at the higher learning rate, so it keeps the lower one. The quantizer
/// settles on its codes more slowly and gets twice the epochs.
inline Preset toy_preset(PredVariant v) {
  Preset p;
  p.model.variant = v;
  p.train.epochs = v == PredVariant::kVqLstm ? 60 : 30;
  p.train.batch_size = 8;
  p.train.peak_lr = v == PredVariant::kVlc ? 5e-3 : 1e-2;
  switch (v) {
    case PredVariant::kLstm: p.strategy = MergeStrategy::none(); break;
    case PredVariant::kVqLstm: p.strategy = MergeStrategy::vq_state(); break;
    case PredVariant::kVlc: p.strategy = MergeStrategy::limited_context(2); break;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct RunConfig {
  uint64_t seed = 1;
  // paths
  std::string data_dir = "data";
  std::string checkpoint = "model.ckpt";
  std::string lattice_dir = "lattices";
  std::string report_dir = "reports";
  // data
  int num_labels = 8;
  double noise = 0.3;
  int train_count = 2000;
  int dev_count = 200;
  int test_count = 200;
  std::string split = "test";
  // model / training (0 = preset value)
  std::string variant = "vq";
  int epochs = 0;
  double peak_lr = 0.0;
  // decoding
  int beam = 4;
  std::string strategy;  // empty = preset default for the variant
  double max_label_ratio = 1.0;
  std::vector<int> beams{1, 2, 4, 8, 16};
  // rescoring
  int lm_order = 2;
  double lm_k = 0.5;
  double lambda = -1.0;  // < 0: tune on the dev split
  int rescore_beam = 8;
  int nbest = 100;
  double prune_margin = 0.1;
  // execution (does not affect artifact contents)
  int threads = 0;  // 0 = one per hardware thread

  PredVariant pred_variant() const { return parse_variant(variant); }

  Preset preset() const {
    Preset p = toy_preset(pred_variant());
    if (epochs > 0) p.train.epochs = epochs;
    if (peak_lr > 0.0) p.train.peak_lr = peak_lr;
    p.train.seed = derive_seed(seed, 0x747261696eULL);
    if (!strategy.empty()) p.strategy = parse_strategy(strategy);
    return p;
  }

  SynthTask task() const {
    SynthTask t;
    t.num_labels = num_labels;
    t.noise = noise;
    t.seed = seed;
    return t;
  }

  DecodeConfig decode_config(int beam_size) const {
    DecodeConfig d;
    d.beam = beam_size;
    d.max_label_ratio = max_label_ratio;
    d.strategy = preset().strategy;
    return d;
  }

  /// Every setting that affects artifact contents, one "key value" per line.
  /// Paths are excluded so that relocated runs hash identically.
  std::string canonical() const {
    std::ostringstream os;
    os << "seed " << seed << "\nnum_labels " << num_labels << "\nnoise " << format_double(noise)
       << "\ntrain_count " << train_count << "\ndev_count " << dev_count << "\ntest_count " << test_count
       << "\nsplit " << split << "\nvariant " << variant << "\nepochs " << epochs << "\npeak_lr "
       << format_double(peak_lr) << "\nbeam " << beam << "\nstrategy " << strategy << "\nmax_label_ratio "
       << format_double(max_label_ratio) << "\nbeams";
    for (int b : beams) os << ' ' << b;
    os << "\nlm_order " << lm_order << "\nlm_k " << format_double(lm_k) << "\nlambda " << format_double(lambda)
       << "\nrescore_beam " << rescore_beam << "\nnbest " << nbest << "\nprune_margin "
       << format_double(prune_margin) << '\n';
    return os.str();
  }

  void validate() const {
    require(train_count >= 1 && dev_count >= 1 && test_count >= 1, "counts must be >= 1");
    require(beam >= 1 && rescore_beam >= 1 && nbest >= 1, "beam sizes and nbest must be >= 1");
    require(!beams.empty(), "beam list must not be empty");
    for (int b : beams) require(b >= 1, "beam list entries must be >= 1");
    require(split == "train" || split == "dev" || split == "test", "split must be train, dev or test");
    require(prune_margin >= 0.0, "prune margin must be non-negative");
    require(threads >= 0, "threads must be non-negative");
    Preset p = preset();
    Model probe(p.model, Vocabulary::letters(num_labels));
    check_compatible(probe, p.strategy);
  }
};

// ---------------------------------------------------------------------------
// Provenance
// ---------------------------------------------------------------------------

inline uint64_t fnv1a(std::string_view bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

inline std::string hex64(uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeFailure("cannot read " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeFailure("cannot write " + path);
  os << text;
  if (!os) throw RuntimeFailure("write failed: " + path);
}

inline std::string checkpoint_hash(const Model& model) {
  std::ostringstream os;
  write_checkpoint(os, model);
  return hex64(fnv1a(os.str()));
}

inline std::string provenance(const std::string& title, const RunConfig& cfg, const std::string& ckpt_hash) {
  std::ostringstream os;
  os << "# " << title << '\n'
     << "# config_hash " << hex64(fnv1a(cfg.canonical())) << '\n'
     << "# seed " << cfg.seed << '\n'
     << "# checkpoint_hash " << (ckpt_hash.empty() ? "none" : ckpt_hash) << '\n';
  return os.str();
}

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

/// Runs f(i) for i in [0, n) on up to `threads` workers with a static
/// interleaved split. Callers store results by index, so output order does
/// not depend on scheduling. The first exception is rethrown.
template <class F>
void parallel_for(size_t n, int threads, F&& f) {
  const size_t w = std::min(n, static_cast<size_t>(std::max(1, threads)));
  if (w <= 1) {
    for (size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(w);
  std::vector<std::thread> pool;
  for (size_t k = 0; k < w; ++k)
    pool.emplace_back([&, k] {
      try {
        for (size_t i = k; i < n; i += w) f(i);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct UtteranceEval {
  std::string id;
  std::vector<int> hypothesis;
  long ref_len = 0;
  long errors = 0;
  long oracle_errors = 0;
  double density = 0.0;
  double score = 0.0;
  bool lattice_valid = true;
  bool best_path_matches = true;
};

struct BeamEval {
  int beam = 0;
  std::vector<UtteranceEval> utts;
  long ref_labels = 0, errors = 0, oracle_errors = 0;
  double density = 0.0;  // mean over utterances

  double wer() const { return static_cast<double>(errors) / static_cast<double>(ref_labels); }
  double oracle_wer() const { return static_cast<double>(oracle_errors) / static_cast<double>(ref_labels); }
};

/// Decodes every utterance; `on_lattice` (if set) sees each lattice, in
/// dataset order, after all decodes finish.
inline BeamEval evaluate_beam(const Model& model, const Dataset& data, const DecodeConfig& dc,
                              const std::function<void(const Utterance&, const DecodeResult&)>& on_lattice = {},
                              int threads = 1) {
  require(!data.utterances.empty(), "evaluate: empty dataset");
  const size_t n = data.utterances.size();
  std::vector<UtteranceEval> evals(n);
  std::vector<DecodeResult> results(on_lattice ? n : 0);
  parallel_for(n, threads, [&](size_t i) {
    const Utterance& u = data.utterances[i];
    DecodeResult r = decode(model, u.features, dc);
    UtteranceEval& ue = evals[i];
    ue.id = u.id;
    ue.hypothesis = r.nbest.front().labels;
    ue.score = r.nbest.front().score;
    ue.ref_len = static_cast<long>(u.labels.size());
    ue.errors = edit_distance(ue.hypothesis, u.labels);
    ue.lattice_valid = validate(r.lattice, model.vocab.num_labels()).ok();
    if (ue.lattice_valid) {
      const PathResult bp = best_path(r.lattice);
      ue.best_path_matches = bp.labels == ue.hypothesis && std::abs(bp.score - ue.score) <= 1e-6;
      ue.oracle_errors = oracle_wer(r.lattice, u.labels).errors;
      ue.density = density(r.lattice);
    }
    if (on_lattice) results[i] = std::move(r);
  });
  BeamEval be;
  be.beam = dc.beam;
  for (size_t i = 0; i < n; ++i) {
    if (on_lattice) on_lattice(data.utterances[i], results[i]);
    const UtteranceEval& ue = evals[i];
    be.ref_labels += ue.ref_len;
    be.errors += ue.errors;
    be.oracle_errors += ue.oracle_errors;
    be.density += ue.density;
  }
  be.utts = std::move(evals);
  be.density /= static_cast<double>(n);
  return be;
}

inline std::string eval_table(const std::vector<BeamEval>& rows) {
  std::ostringstream os;
  os << "beam wer_pct oracle_wer_pct density errors oracle_errors ref_labels\n";
  for (const BeamEval& b : rows)
    os << b.beam << ' ' << fmt("%.4f", 100.0 * b.wer()) << ' ' << fmt("%.4f", 100.0 * b.oracle_wer()) << ' '
       << fmt("%.4f", b.density) << ' ' << b.errors << ' ' << b.oracle_errors << ' ' << b.ref_labels << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Rescoring
// ---------------------------------------------------------------------------

inline std::vector<std::vector<int>> label_corpus(const Dataset& d) {
  std::vector<std::vector<int>> c;
  for (const auto& u : d.utterances) c.push_back(u.labels);
  return c;
}

/// N-best lists from margin-pruned lattices, acoustically sorted.
inline std::vector<RescoreItem> collect_nbest(const Model& model, const Dataset& data, const DecodeConfig& dc,
                                              double margin, size_t n, int threads = 1) {
  std::vector<RescoreItem> items(data.utterances.size());
  parallel_for(items.size(), threads, [&](size_t i) {
    const Utterance& u = data.utterances[i];
    const DecodeResult r = decode(model, u.features, dc);
    items[i] = {extract_nbest(prune_lattice(r.lattice, margin), n), u.labels};
  });
  return items;
}

struct RescoreOutcome {
  LambdaSweep dev_sweep;
  double lambda = 0.0;
  long test_ref_labels = 0;
  long test_errors_before = 0;
  long test_errors_after = 0;
  std::vector<std::vector<int>> test_rescored;  // top hypothesis per test utterance
};

inline RescoreOutcome run_rescoring(const NGramLM& lm, const std::vector<RescoreItem>& dev,
                                    const std::vector<RescoreItem>& test, double fixed_lambda) {
  RescoreOutcome out;
  out.dev_sweep = tune_lambda(dev, lm);
  out.lambda = fixed_lambda >= 0.0 ? fixed_lambda : out.dev_sweep.best_lambda;
  for (const auto& it : test) {
    out.test_ref_labels += static_cast<long>(it.reference.size());
    if (it.nbest.empty()) throw RuntimeFailure("rescore: empty n-best list");
    out.test_errors_before += edit_distance(it.nbest.front().labels, it.reference);
    auto re = rescore(it.nbest, lm, out.lambda);
    out.test_errors_after += edit_distance(re.front().labels, it.reference);
    out.test_rescored.push_back(re.front().labels);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline std::string split_path(const RunConfig& cfg, const std::string& split) {
  return (std::filesystem::path(cfg.data_dir) / (split + ".txt")).string();
}

inline std::string report_path(const RunConfig& cfg, const std::string& name) {
  std::filesystem::create_directories(cfg.report_dir);
  return (std::filesystem::path(cfg.report_dir) / name).string();
}

inline void cmd_gen_data(const RunConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(cfg.data_dir);
  const SynthTask task = cfg.task();
  save_dataset(split_path(cfg, "train"), generate(task, cfg.train_count, "train"));
  save_dataset(split_path(cfg, "dev"), generate(task, cfg.dev_count, "dev"));
  save_dataset(split_path(cfg, "test"), generate(task, cfg.test_count, "test"));
}

struct TrainSummary {
  TrainResult result;
  double seconds = 0.0;
  std::string checkpoint_hash;
};

inline Model make_model(const RunConfig& cfg, const Vocabulary& vocab, int feat_dim) {
  Preset p = cfg.preset();
  p.model.feat_dim = feat_dim;
  Model m(p.model, vocab);
  m.init(derive_seed(cfg.seed, 0x6d6f64656cULL));
  return m;
}

/// Trains a model on `train_data`; the on-epoch hook sees progress.
inline Model train_model(const RunConfig& cfg, const Dataset& train_data, TrainSummary* summary = nullptr,
                         const EpochCallback& on_epoch = {}) {
  Model m = make_model(cfg, train_data.vocab, train_data.feat_dim);
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult r = train(m, train_data, cfg.preset().train, on_epoch);
  if (summary) {
    summary->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    summary->result = std::move(r);
    summary->checkpoint_hash = checkpoint_hash(m);
  }
  return m;
}

inline TrainSummary cmd_train(const RunConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const Dataset data = load_dataset(split_path(cfg, "train"));
  TrainSummary s;
  const Model m = train_model(cfg, data, &s, on_epoch);
  if (auto dir = std::filesystem::path(cfg.checkpoint).parent_path(); !dir.empty())
    std::filesystem::create_directories(dir);
  save_checkpoint(cfg.checkpoint, m);
  std::ostringstream os;
  os << provenance("vqt loss curve", cfg, s.checkpoint_hash) << "# variant " << cfg.variant << '\n'
     << "epoch mean_nll\n";
  for (const auto& e : s.result.curve) os << e.epoch << ' ' << fmt("%.6f", e.mean_nll) << '\n';
  write_file(report_path(cfg, "loss_curve_" + cfg.variant + ".txt"), os.str());
  return s;
}

inline void check_model_matches(const RunConfig& cfg, const Model& m) {
  if (m.config.variant != cfg.pred_variant())
    throw ContractViolation("checkpoint holds a " + to_string(m.config.variant) + " model but --variant is " +
                            cfg.variant);
}

/// Decodes `split` at cfg.beam; writes transcripts and one lattice per utterance.
inline BeamEval cmd_decode(const RunConfig& cfg) {
  cfg.validate();
  const Model model = load_checkpoint(cfg.checkpoint);
  check_model_matches(cfg, model);
  const Dataset data = load_dataset(split_path(cfg, cfg.split));
  std::filesystem::create_directories(cfg.lattice_dir);
  std::ostringstream tx;
  tx << provenance("vqt transcripts", cfg, checkpoint_hash(model)) << "# split " << cfg.split << " beam "
     << cfg.beam << " strategy " << to_string(cfg.preset().strategy) << '\n';
  BeamEval be = evaluate_beam(model, data, cfg.decode_config(cfg.beam), [&](const Utterance& u, const DecodeResult& r) {
    const ValidationReport v = validate(r.lattice, model.vocab.num_labels());
    if (!v.ok()) throw RuntimeFailure("lattice for " + u.id + " failed validation:\n" + v.to_text());
    write_file((std::filesystem::path(cfg.lattice_dir) / (u.id + ".lat")).string(), lattice_to_string(r.lattice));
    tx << u.id << '\t' << model.vocab.join(r.nbest.front().labels) << '\t' << fmt("%.9g", r.nbest.front().score)
       << '\n';
  }, resolve_threads(cfg.threads));
  write_file(report_path(cfg, "transcripts_" + cfg.variant + "_" + cfg.split + ".txt"), tx.str());
  return be;
}

inline std::vector<BeamEval> cmd_eval(const RunConfig& cfg) {
  cfg.validate();
  const Model model = load_checkpoint(cfg.checkpoint);
  check_model_matches(cfg, model);
  const Dataset data = load_dataset(split_path(cfg, cfg.split));
  std::vector<BeamEval> rows;
  for (int b : cfg.beams) {
    rows.push_back(evaluate_beam(model, data, cfg.decode_config(b), {}, resolve_threads(cfg.threads)));
    for (const auto& u : rows.back().utts)
      if (!u.lattice_valid) throw RuntimeFailure("lattice for " + u.id + " failed validation");
  }
  std::ostringstream os;
  os << provenance("vqt eval", cfg, checkpoint_hash(model)) << "# model " << cfg.variant << " split " << cfg.split
     << " utterances " << data.size() << " strategy " << to_string(cfg.preset().strategy) << '\n'
     << eval_table(rows);
  const BeamEval& last = rows.back();
  os << "# summary: beam " << last.beam << " reaches " << fmt("%.2f", 100.0 * last.oracle_wer())
     << "% oracle error at density " << fmt("%.2f", last.density) << " (1-best " << fmt("%.2f", 100.0 * last.wer())
     << "%)\n";
  write_file(report_path(cfg, "eval_" + cfg.variant + "_" + cfg.split + ".txt"), os.str());
  return rows;
}

inline RescoreOutcome cmd_rescore(const RunConfig& cfg) {
  cfg.validate();
  const Model model = load_checkpoint(cfg.checkpoint);
  check_model_matches(cfg, model);
  const Dataset train_data = load_dataset(split_path(cfg, "train"));
  const Dataset dev = load_dataset(split_path(cfg, "dev"));
  const Dataset test = load_dataset(split_path(cfg, "test"));
  const NGramLM lm = train_ngram(label_corpus(train_data), model.vocab.num_labels(), cfg.lm_order, cfg.lm_k);
  save_ngram(report_path(cfg, "lm.txt"), lm);
  const DecodeConfig dc = cfg.decode_config(cfg.rescore_beam);
  const auto n = static_cast<size_t>(cfg.nbest);
  const int th = resolve_threads(cfg.threads);
  RescoreOutcome out = run_rescoring(lm, collect_nbest(model, dev, dc, cfg.prune_margin, n, th),
                                     collect_nbest(model, test, dc, cfg.prune_margin, n, th), cfg.lambda);
  const std::string ck = checkpoint_hash(model);
  std::ostringstream os;
  os << provenance("vqt rescore", cfg, ck) << "# model " << cfg.variant << " beam " << cfg.rescore_beam
     << " nbest " << cfg.nbest << " prune_margin " << fmt("%g", cfg.prune_margin) << " lm_order " << cfg.lm_order
     << '\n'
     << "lambda dev_errors\n";
  for (size_t i = 0; i < out.dev_sweep.lambdas.size(); ++i)
    os << fmt("%.1f", out.dev_sweep.lambdas[i]) << ' ' << out.dev_sweep.errors[i] << '\n';
  const double ref = static_cast<double>(out.test_ref_labels);
  const double before = 100.0 * static_cast<double>(out.test_errors_before) / ref;
  const double after = 100.0 * static_cast<double>(out.test_errors_after) / ref;
  os << "# test\nlambda wer_before_pct wer_after_pct delta_pct\n"
     << fmt("%.1f", out.lambda) << ' ' << fmt("%.4f", before) << ' ' << fmt("%.4f", after) << ' '
     << fmt("%.4f", after - before) << '\n';
  write_file(report_path(cfg, "rescore_" + cfg.variant + ".txt"), os.str());
  std::ostringstream tx;
  tx << provenance("vqt rescored transcripts", cfg, ck) << "# split test lambda " << fmt("%.1f", out.lambda) << '\n';
  for (size_t i = 0; i < test.size(); ++i)
    tx << test.utterances[i].id << '\t' << model.vocab.join(out.test_rescored[i]) << '\n';
  write_file(report_path(cfg, "rescored_" + cfg.variant + "_test.txt"), tx.str());
  return out;
}

}  // namespace vqt
