// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The VQT Authors.
//
// Utterance-level forward/backward through the whole transducer, the AdamW
// optimizer with a one-cycle learning-rate schedule, and the training loop.

#pragma once

#include "vqt/loss.hpp"
#include "vqt/model.hpp"
#include "vqt/synthdata.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace vqt {

// ---------------------------------------------------------------------------
// Prediction network over a whole label sequence
// ---------------------------------------------------------------------------

struct PredCache {
  std::vector<LstmCache> lstm;     // [u - 1]: step consuming y_u
  std::vector<QuantCache> qh, qc;  // [u], 0 = quantization of the zero state
  std::vector<VlcCache> vlc;       // [u]
};

/// Rows g_0 .. g_U of the prediction network for labels y_1 .. y_U.
inline Mat pred_forward(const Model& model, const std::vector<int>& y, const QuantOptions& qopt,
                        PredCache* cache = nullptr) {
  const int U = static_cast<int>(y.size());
  const int d = model.config.pred_dim;
  Mat G(U + 1, d);
  for (int v : y) require(v >= 1 && v <= model.vocab.num_labels(), "pred_forward: invalid label id");
  switch (model.config.variant) {
    case PredVariant::kLstm: {
      if (cache) cache->lstm.resize(static_cast<size_t>(U));
      LstmState s{Vec::Zero(d), Vec::Zero(d)};
      G.row(0).setZero();
      for (int u = 1; u <= U; ++u) {
        s = lstm_forward(model.pred_cell, model.embedding.row(y[static_cast<size_t>(u - 1)]).transpose(), s,
                         cache ? &cache->lstm[static_cast<size_t>(u - 1)] : nullptr);
        G.row(u) = s.h.transpose();
      }
      break;
    }
    case PredVariant::kVqLstm: {
      if (cache) {
        cache->lstm.resize(static_cast<size_t>(U));
        cache->qh.resize(static_cast<size_t>(U + 1));
        cache->qc.resize(static_cast<size_t>(U + 1));
      }
      const bool from_q = model.config.joint_from_quantized;
      Quantized qh = quantize(model.quant_h, Vec::Zero(d), qopt, cache ? &cache->qh[0] : nullptr);
      Quantized qc = quantize(model.quant_c, Vec::Zero(d), qopt, cache ? &cache->qc[0] : nullptr);
      LstmState s{qh.recon, qc.recon};
      G.row(0) = from_q ? Vec(qh.recon) : Vec(Vec::Zero(d));
      for (int u = 1; u <= U; ++u) {
        const auto su = static_cast<size_t>(u);
        LstmState raw = lstm_forward(model.pred_cell, model.embedding.row(y[su - 1]).transpose(), s,
                                     cache ? &cache->lstm[su - 1] : nullptr);
        qh = quantize(model.quant_h, raw.h, qopt, cache ? &cache->qh[su] : nullptr);
        qc = quantize(model.quant_c, raw.c, qopt, cache ? &cache->qc[su] : nullptr);
        G.row(u) = from_q ? qh.recon.transpose() : raw.h.transpose();
        s = {std::move(qh.recon), std::move(qc.recon)};
      }
      break;
    }
    case PredVariant::kVlc: {
      if (cache) cache->vlc.resize(static_cast<size_t>(U + 1));
      int older = kStartToken, newer = kStartToken;
      G.row(0) = vlc_forward(model.vlc, older, newer, cache ? &cache->vlc[0] : nullptr).transpose();
      for (int u = 1; u <= U; ++u) {
        older = newer;
        newer = y[static_cast<size_t>(u - 1)];
        G.row(u) = vlc_forward(model.vlc, older, newer, cache ? &cache->vlc[static_cast<size_t>(u)] : nullptr)
                       .transpose();
      }
      break;
    }
  }
  return G;
}

inline void pred_backward(const Model& model, const std::vector<int>& y, const PredCache& k, const Mat& dG,
                          Model& grad) {
  const int U = static_cast<int>(y.size());
  const int d = model.config.pred_dim;
  switch (model.config.variant) {
    case PredVariant::kLstm: {
      Vec dh = Vec::Zero(d), dc = Vec::Zero(d);
      for (int u = U; u >= 1; --u) {
        const auto su = static_cast<size_t>(u);
        Vec dht = dh + dG.row(u).transpose();
        LstmInputGrads g = lstm_backward(model.pred_cell, k.lstm[su - 1], dht, dc, grad.pred_cell);
        grad.embedding.row(y[su - 1]) += g.dx.transpose();
        dh = std::move(g.dh_prev);
        dc = std::move(g.dc_prev);
      }
      break;
    }
    case PredVariant::kVqLstm: {
      const bool from_q = model.config.joint_from_quantized;
      Vec dh = Vec::Zero(d), dc = Vec::Zero(d);
      for (int u = U; u >= 1; --u) {
        const auto su = static_cast<size_t>(u);
        Vec dhq = from_q ? Vec(dh + dG.row(u).transpose()) : dh;
        Vec dh_raw = quantize_backward(model.quant_h, k.qh[su], dhq, grad.quant_h);
        Vec dc_raw = quantize_backward(model.quant_c, k.qc[su], dc, grad.quant_c);
        if (!from_q) dh_raw += dG.row(u).transpose();
        LstmInputGrads g = lstm_backward(model.pred_cell, k.lstm[su - 1], dh_raw, dc_raw, grad.pred_cell);
        grad.embedding.row(y[su - 1]) += g.dx.transpose();
        dh = std::move(g.dh_prev);
        dc = std::move(g.dc_prev);
      }
      Vec dhq0 = from_q ? Vec(dh + dG.row(0).transpose()) : dh;
      quantize_backward(model.quant_h, k.qh[0], dhq0, grad.quant_h);
      quantize_backward(model.quant_c, k.qc[0], dc, grad.quant_c);
      break;
    }
    case PredVariant::kVlc:
      for (int u = 0; u <= U; ++u)
        vlc_backward(model.vlc, k.vlc[static_cast<size_t>(u)], dG.row(u).transpose(), grad.vlc);
      break;
  }
}

// ---------------------------------------------------------------------------
// Joint network over the full (t, u) grid
// ---------------------------------------------------------------------------

struct JointCache {
  Mat EP, PP, HJ, LP;  // cells are indexed t * (U + 1) + u
};

inline LogProbGrid joint_forward(const Model& model, const Mat& m, const Mat& G, const std::vector<int>& y,
                                 JointCache* cache = nullptr) {
  const JointNetwork& jn = model.joint_net;
  const auto T = static_cast<int>(m.rows());
  const auto U1 = static_cast<int>(G.rows());
  const int V = model.vocab.output_size();
  Mat EP = (m * jn.enc_proj.weight.transpose()).rowwise() + jn.enc_proj.bias.transpose();
  Mat PP = (G * jn.pred_proj.weight.transpose()).rowwise() + jn.pred_proj.bias.transpose();
  Mat HJ(T * U1, EP.cols());
  for (int t = 0; t < T; ++t)
    for (int u = 0; u < U1; ++u) HJ.row(t * U1 + u) = (EP.row(t).array() * PP.row(u).array()).tanh();
  Mat Z = (HJ * jn.out_proj.weight.transpose()).rowwise() + jn.out_proj.bias.transpose();
  LogProbGrid grid(T, y, V);
  auto& data = grid.data();
  for (Eigen::Index c = 0; c < Z.rows(); ++c) {
    const double mx = Z.row(c).maxCoeff();
    const double lse = mx + std::log((Z.row(c).array() - mx).exp().sum());
    Z.row(c).array() -= lse;
    for (int k = 0; k < V; ++k) data[static_cast<size_t>(c) * static_cast<size_t>(V) + static_cast<size_t>(k)] = Z(c, k);
  }
  if (cache) {
    cache->EP = std::move(EP);
    cache->PP = std::move(PP);
    cache->HJ = std::move(HJ);
    cache->LP = std::move(Z);
  }
  return grid;
}

/// Returns (dL/dm, dL/dG) given dL/d(log-prob grid).
inline std::pair<Mat, Mat> joint_backward(const Model& model, const Mat& m, const Mat& G, const JointCache& k,
                                          const LogProbGrid& dgrid, Model& grad) {
  const JointNetwork& jn = model.joint_net;
  JointNetwork& gj = grad.joint_net;
  const auto T = static_cast<int>(m.rows());
  const auto U1 = static_cast<int>(G.rows());
  const int V = model.vocab.output_size();
  Mat dLP(T * U1, V);
  const auto& dd = dgrid.data();
  for (int c = 0; c < T * U1; ++c)
    for (int v = 0; v < V; ++v) dLP(c, v) = dd[static_cast<size_t>(c) * static_cast<size_t>(V) + static_cast<size_t>(v)];
  Mat P = k.LP.array().exp().matrix();
  Mat dZ = dLP - (P.array().colwise() * dLP.rowwise().sum().array()).matrix();
  gj.out_proj.weight.noalias() += dZ.transpose() * k.HJ;
  gj.out_proj.bias += dZ.colwise().sum().transpose();
  Mat dA = ((dZ * jn.out_proj.weight).array() * (1.0 - k.HJ.array().square())).matrix();
  Mat dEP = Mat::Zero(T, k.EP.cols());
  Mat dPP = Mat::Zero(U1, k.PP.cols());
  for (int t = 0; t < T; ++t) {
    for (int u = 0; u < U1; ++u) {
      const auto row = dA.row(t * U1 + u).array();
      dEP.row(t).array() += row * k.PP.row(u).array();
      dPP.row(u).array() += row * k.EP.row(t).array();
    }
  }
  gj.enc_proj.weight.noalias() += dEP.transpose() * m;
  gj.enc_proj.bias += dEP.colwise().sum().transpose();
  gj.pred_proj.weight.noalias() += dPP.transpose() * G;
  gj.pred_proj.bias += dPP.colwise().sum().transpose();
  return {dEP * jn.enc_proj.weight, dPP * jn.pred_proj.weight};
}

// ---------------------------------------------------------------------------
// Utterance loss
// ---------------------------------------------------------------------------

/// Log-prob grid of an utterance under the model (inference-mode quantization
/// unless options say otherwise).
inline LogProbGrid build_grid(const Model& model, const Mat& features, const std::vector<int>& y,
                              const QuantOptions& qopt = {}) {
  Mat m = encode(model, features);
  Mat G = pred_forward(model, y, qopt);
  return joint_forward(model, m, G, y);
}

/// Transducer NLL of one utterance; when `grad` is given, dNLL/dparams is
/// accumulated into it.
inline double utterance_loss(const Model& model, const Mat& features, const std::vector<int>& y,
                             const QuantOptions& qopt, Model* grad = nullptr) {
  if (grad == nullptr) return forward_backward_nll(build_grid(model, features, y, qopt), y);
  EncoderCache ecache;
  PredCache pcache;
  JointCache jcache;
  Mat m = encode(model, features, &ecache);
  Mat G = pred_forward(model, y, qopt, &pcache);
  LogProbGrid grid = joint_forward(model, m, G, y, &jcache);
  AlignmentTrellis tr = forward_backward(grid, y);
  if (!std::isfinite(tr.nll)) return tr.nll;
  LogProbGrid dgrid = nll_gradient(grid, y, &tr);
  auto [dm, dG] = joint_backward(model, m, G, jcache, dgrid, *grad);
  pred_backward(model, y, pcache, dG, *grad);
  encode_backward(model, ecache, dm, *grad);
  return tr.nll;
}

// ---------------------------------------------------------------------------
// Optimizer and schedule
// ---------------------------------------------------------------------------

/// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.01)
      : b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {}

  void step(Model& params, const Model& grad, double lr) {
    ++t_;
    std::vector<std::span<const double>> gs;
    grad.visit([&](const std::string&, std::span<const double> s) { gs.push_back(s); });
    if (m_.empty()) {
      for (auto& s : gs) {
        m_.emplace_back(s.size(), 0.0);
        v_.emplace_back(s.size(), 0.0);
      }
    }
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    size_t idx = 0;
    params.visit([&](const std::string&, std::span<double> p) {
      auto& m = m_[idx];
      auto& v = v_[idx];
      const auto& g = gs[idx];
      for (size_t i = 0; i < p.size(); ++i) {
        m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
        v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
        const double upd = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_) + wd_ * p[i];
        p[i] -= lr * upd;
      }
      ++idx;
    });
  }

 private:
  double b1_, b2_, eps_, wd_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Single-cycle schedule: cosine warm-up from peak/div to peak over the first
/// `pct_start` of steps, then cosine decay to peak/(div*final_div).
struct OneCycleSchedule {
  double peak_lr = 5e-4;
  long total_steps = 1;
  double pct_start = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;

  double at(long step) const {
    const double initial = peak_lr / div_factor;
    const double final_lr = initial / final_div_factor;
    const double up = std::max(1.0, pct_start * static_cast<double>(total_steps));
    auto cos_anneal = [](double a, double b, double p) { return b + (a - b) * 0.5 * (1.0 + std::cos(M_PI * p)); };
    const auto s = static_cast<double>(step);
    if (s <= up) return cos_anneal(initial, peak_lr, s / up);
    const double down = std::max(1.0, static_cast<double>(total_steps) - up);
    return cos_anneal(peak_lr, final_lr, std::min(1.0, (s - up) / down));
  }
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
  int epochs = 12;
  int batch_size = 8;
  double peak_lr = 5e-3;
  double weight_decay = 0.01;
  double clip_norm = 5.0;
  uint64_t seed = 1;
  TemperatureSchedule temperature;
  QuantMode quant_mode = QuantMode::kHard;
  bool gumbel_noise = true;
  int max_utterances = 0;  // 0 = use the whole dataset
};

struct EpochStats {
  int epoch = 0;
  double mean_nll = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> curve;
};

using EpochCallback = std::function<void(const Model&, const EpochStats&)>;

inline double gradient_norm(const Model& grad) {
  double s = 0.0;
  grad.visit([&](const std::string&, std::span<const double> v) {
    for (double x : v) s += x * x;
  });
  return std::sqrt(s);
}

inline void scale_params(Model& grad, double factor) {
  grad.visit([&](const std::string&, std::span<double> v) {
    for (double& x : v) x *= factor;
  });
}

/// Trains `model` in place. Deterministic given config.seed and the data.
inline TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  require(cfg.epochs >= 0 && cfg.batch_size >= 1, "train: bad epochs / batch size");
  require(!data.utterances.empty(), "train: empty dataset");
  require(data.vocab == model.vocab, "train: dataset vocabulary differs from the model's");
  const size_t n = cfg.max_utterances > 0 ? std::min<size_t>(data.size(), static_cast<size_t>(cfg.max_utterances))
                                          : data.size();
  const long batches_per_epoch = static_cast<long>((n + static_cast<size_t>(cfg.batch_size) - 1) /
                                                   static_cast<size_t>(cfg.batch_size));
  OneCycleSchedule sched;
  sched.peak_lr = cfg.peak_lr;
  sched.total_steps = std::max<long>(1, batches_per_epoch * cfg.epochs);
  AdamW opt(0.9, 0.999, 1e-8, cfg.weight_decay);
  SeededRng noise(derive_seed(cfg.seed, 0x6e6f697365ULL));
  Model grad = model.zeros_like();
  TrainResult result;
  std::vector<size_t> order(n);
  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), size_t{0});
    SeededRng shuf(derive_seed(cfg.seed, static_cast<uint64_t>(epoch)));
    for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<size_t>(shuf.uniform_int(0, static_cast<int64_t>(i - 1)))]);
    double total = 0.0;
    for (size_t b0 = 0; b0 < n; b0 += static_cast<size_t>(cfg.batch_size)) {
      const size_t b1 = std::min(n, b0 + static_cast<size_t>(cfg.batch_size));
      scale_params(grad, 0.0);
      QuantOptions q;
      q.mode = cfg.quant_mode;
      q.temperature = cfg.temperature.at(static_cast<double>(step) / static_cast<double>(sched.total_steps));
      q.rng = cfg.gumbel_noise ? &noise : nullptr;
      for (size_t j = b0; j < b1; ++j) {
        const Utterance& u = data.utterances[order[j]];
        const double nll = utterance_loss(model, u.features, u.labels, q, &grad);
        if (!std::isfinite(nll))
          throw RuntimeFailure("train: non-finite loss at epoch " + std::to_string(epoch) + ", utterance " + u.id +
                               " (lr " + std::to_string(sched.at(step)) + "); training diverged");
        total += nll;
      }
      scale_params(grad, 1.0 / static_cast<double>(b1 - b0));
      const double norm = gradient_norm(grad);
      if (!std::isfinite(norm)) throw RuntimeFailure("train: non-finite gradient at epoch " + std::to_string(epoch));
      if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) scale_params(grad, cfg.clip_norm / norm);
      opt.step(model, grad, sched.at(step));
      ++step;
    }
    EpochStats st{epoch, total / static_cast<double>(n)};
    result.curve.push_back(st);
    if (on_epoch) on_epoch(model, st);
  }
  return result;
}

}  // namespace vqt
