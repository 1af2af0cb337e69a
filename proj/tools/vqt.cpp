// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The VQT Authors.
//
// vqt: command-line front end.
//
//   vqt gen-data --data-dir data
//   vqt train    --variant vq --checkpoint vq.ckpt
//   vqt decode   --variant vq --checkpoint vq.ckpt --beam 8
//   vqt eval     --variant vq --checkpoint vq.ckpt --beams 1,2,4,8,16
//   vqt rescore  --variant vq --checkpoint vq.ckpt
//
// Exit status: 0 success, 1 usage or configuration error, 2 runtime failure.

#include "vqt/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace {

void print_beams(const std::vector<vqt::BeamEval>& rows) {
  std::cout << vqt::eval_table(rows);
}

}  // namespace

int main(int argc, char** argv) {
  vqt::RunConfig cfg;
  CLI::App app{"Sequence transducer toolkit: synthetic data, training, lattice decoding and rescoring."};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "Read option values from an INI/TOML file");
  app.fallthrough();

  app.add_option("--seed", cfg.seed, "Master seed");
  app.add_option("--data-dir", cfg.data_dir, "Directory holding train/dev/test dataset files");
  app.add_option("--checkpoint", cfg.checkpoint, "Model checkpoint path");
  app.add_option("--lattice-dir", cfg.lattice_dir, "Output directory for lattices");
  app.add_option("--report-dir", cfg.report_dir, "Output directory for reports");
  app.add_option("--num-labels", cfg.num_labels, "Synthetic vocabulary size")->check(CLI::Range(1, 26));
  app.add_option("--noise", cfg.noise, "Synthetic feature noise stddev")->check(CLI::NonNegativeNumber);
  app.add_option("--train-count", cfg.train_count, "Training utterances");
  app.add_option("--dev-count", cfg.dev_count, "Dev utterances");
  app.add_option("--test-count", cfg.test_count, "Test utterances");
  app.add_option("--split", cfg.split, "Split to decode / evaluate")->check(CLI::IsMember({"train", "dev", "test"}));
  app.add_option("--variant", cfg.variant, "Prediction network")->check(CLI::IsMember({"baseline", "vq", "vlc"}));
  app.add_option("--epochs", cfg.epochs, "Training epochs (0 = preset)");
  app.add_option("--lr", cfg.peak_lr, "Peak learning rate (0 = preset)");
  app.add_option("--beam", cfg.beam, "Beam size for decode");
  app.add_option("--strategy", cfg.strategy,
                 "Merge strategy: none | same_label_sequence | limited_context[:k] | vq_state (empty = variant "
                 "default)");
  app.add_option("--max-label-ratio", cfg.max_label_ratio, "Label budget per frame");
  app.add_option("--beams", cfg.beams, "Beam sweep for eval")->delimiter(',');
  app.add_option("--lm-order", cfg.lm_order, "N-gram order")->check(CLI::Range(1, 3));
  app.add_option("--lm-k", cfg.lm_k, "Add-k smoothing constant");
  app.add_option("--lambda", cfg.lambda, "LM weight (negative = tune on dev)");
  app.add_option("--rescore-beam", cfg.rescore_beam, "Beam size used before rescoring");
  app.add_option("--nbest", cfg.nbest, "N-best list size for rescoring");
  app.add_option("--prune-margin", cfg.prune_margin, "Relative lattice pruning margin");
  app.add_option("--threads", cfg.threads, "Decoding worker threads (0 = one per hardware thread)");

  auto* gen = app.add_subcommand("gen-data", "Write synthetic train/dev/test datasets");
  auto* trn = app.add_subcommand("train", "Train a model and write its checkpoint and loss curve");
  auto* dec = app.add_subcommand("decode", "Decode a split, writing transcripts and lattices");
  auto* evl = app.add_subcommand("eval", "Beam sweep report: WER, oracle WER, density");
  auto* rsc = app.add_subcommand("rescore", "N-gram rescoring of pruned-lattice n-best lists");
  app.require_subcommand(1, 1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      vqt::cmd_gen_data(cfg);
      std::cout << "wrote " << cfg.train_count << '/' << cfg.dev_count << '/' << cfg.test_count
                << " utterances to " << cfg.data_dir << '\n';
    } else if (trn->parsed()) {
      auto s = vqt::cmd_train(cfg, [](const vqt::Model&, const vqt::EpochStats& e) {
        std::printf("epoch %d mean_nll %.6f\n", e.epoch, e.mean_nll);
        std::fflush(stdout);
      });
      std::printf("trained %s in %.1f s, checkpoint %s (%s)\n", cfg.variant.c_str(), s.seconds,
                  cfg.checkpoint.c_str(), s.checkpoint_hash.c_str());
    } else if (dec->parsed()) {
      auto be = vqt::cmd_decode(cfg);
      print_beams({be});
    } else if (evl->parsed()) {
      print_beams(vqt::cmd_eval(cfg));
    } else if (rsc->parsed()) {
      auto r = vqt::cmd_rescore(cfg);
      std::printf("lambda %.1f test errors %ld -> %ld of %ld labels\n", r.lambda, r.test_errors_before,
                  r.test_errors_after, r.test_ref_labels);
    }
  } catch (const vqt::ContractViolation& e) {
    std::cerr << "vqt: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "vqt: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
