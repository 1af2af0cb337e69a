// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The VQT Authors.
//
// Network components of the transducer: bidirectional LSTM encoder, the three
// prediction networks (LSTM, VQ-LSTM, very-limited-context convolution), the
// grouped Gumbel vector quantizer and the joint network. Every layer exposes a
// forward pass that records what its backward pass needs.

#pragma once

#include "vqt/numerics.hpp"

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace vqt {

constexpr int kBlank = 0;       // blank id in the joint output
constexpr int kStartToken = 0;  // embedding slot used as the start / padding symbol

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

/// Label symbols; id 0 is the blank, symbol i (0-based) has label id i + 1.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
    require(!symbols_.empty(), "Vocabulary: no symbols");
    for (size_t i = 0; i < symbols_.size(); ++i) {
      require(!symbols_[i].empty(), "Vocabulary: empty symbol");
      require(symbols_[i].find_first_of(" \t\n") == std::string::npos,
              "Vocabulary: symbols may not contain whitespace");
      auto [it, inserted] = index_.emplace(symbols_[i], static_cast<int>(i) + 1);
      require(inserted, "Vocabulary: duplicate symbol '" + symbols_[i] + "'");
    }
  }

  /// Lower-case letters a, b, c, ... (at most 26).
  static Vocabulary letters(int count) {
    require(count >= 1 && count <= 26, "Vocabulary::letters: count must be in [1, 26]");
    std::vector<std::string> s;
    for (int i = 0; i < count; ++i) s.emplace_back(1, static_cast<char>('a' + i));
    return Vocabulary(std::move(s));
  }

  int num_labels() const { return static_cast<int>(symbols_.size()); }
  int output_size() const { return num_labels() + 1; }
  const std::vector<std::string>& symbols() const { return symbols_; }

  const std::string& symbol(int id) const {
    require(id >= 1 && id <= num_labels(), "Vocabulary: label id out of range");
    return symbols_[static_cast<size_t>(id - 1)];
  }

  int id(std::string_view sym) const {
    auto it = index_.find(std::string(sym));
    if (it == index_.end()) throw ContractViolation("Vocabulary: unknown symbol '" + std::string(sym) + "'");
    return it->second;
  }

  std::string join(std::span<const int> labels, std::string_view sep = " ") const {
    std::string out;
    for (size_t i = 0; i < labels.size(); ++i) {
      if (i) out += sep;
      out += symbol(labels[i]);
    }
    return out;
  }

  /// FNV-1a over the symbol list, used as a cheap compatibility stamp.
  uint64_t checksum() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& s : symbols_) {
      for (unsigned char ch : s) h = (h ^ ch) * 0x100000001b3ULL;
      h = (h ^ 0xffu) * 0x100000001b3ULL;
    }
    return h;
  }

  bool operator==(const Vocabulary& o) const { return symbols_ == o.symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
};

// ---------------------------------------------------------------------------
// LSTM cell
// ---------------------------------------------------------------------------

/// Gate order in the stacked maps: input, forget, candidate, output.
struct LstmCell {
  DenseMap input_map;   // 4D x in
  DenseMap hidden_map;  // 4D x D

  LstmCell() = default;
  LstmCell(int input_dim, int state_dim)
      : input_map(4 * state_dim, input_dim), hidden_map(4 * state_dim, state_dim) {}

  int input_dim() const { return static_cast<int>(input_map.in_dim()); }
  int state_dim() const { return static_cast<int>(hidden_map.in_dim()); }

  void init(SeededRng& rng) {
    input_map.init_uniform(rng);
    hidden_map.init_uniform(rng);
    // forget-gate bias starts at 1
    input_map.bias.segment(state_dim(), state_dim()).setOnes();
  }
};

struct LstmState {
  Vec h;
  Vec c;
};

struct LstmCache {
  Vec x, h_prev, c_prev;
  Vec i, f, g, o;
  Vec tanh_c;
};

inline LstmState lstm_forward(const LstmCell& cell, const Vec& x, const LstmState& prev,
                              LstmCache* cache = nullptr) {
  const int d = cell.state_dim();
  require(x.size() == cell.input_dim(), "lstm_step: input dimension mismatch");
  require(prev.h.size() == d && prev.c.size() == d, "lstm_step: state dimension mismatch");
  Vec a = cell.input_map.weight * x + cell.input_map.bias + cell.hidden_map.weight * prev.h +
          cell.hidden_map.bias;
  Vec i = a.segment(0, d).unaryExpr([](double v) { return sigmoid(v); });
  Vec f = a.segment(d, d).unaryExpr([](double v) { return sigmoid(v); });
  Vec g = a.segment(2 * d, d).array().tanh().matrix();
  Vec o = a.segment(3 * d, d).unaryExpr([](double v) { return sigmoid(v); });
  LstmState next;
  next.c = (f.array() * prev.c.array() + i.array() * g.array()).matrix();
  Vec tc = next.c.array().tanh().matrix();
  next.h = (o.array() * tc.array()).matrix();
  if (cache) {
    cache->x = x;
    cache->h_prev = prev.h;
    cache->c_prev = prev.c;
    cache->i = std::move(i);
    cache->f = std::move(f);
    cache->g = std::move(g);
    cache->o = std::move(o);
    cache->tanh_c = std::move(tc);
  }
  return next;
}

struct LstmInputGrads {
  Vec dx, dh_prev, dc_prev;
};

/// Backward of one LSTM step given gradients on the new (h, c).
inline LstmInputGrads lstm_backward(const LstmCell& cell, const LstmCache& k, const Vec& dh,
                                    const Vec& dc, LstmCell& grad) {
  const int d = cell.state_dim();
  Vec dtc = (dh.array() * k.o.array()).matrix();
  Vec dout = (dh.array() * k.tanh_c.array()).matrix();
  Vec dct = dc + (dtc.array() * (1.0 - k.tanh_c.array().square())).matrix();
  Vec da(4 * d);
  da.segment(0, d) = (dct.array() * k.g.array() * k.i.array() * (1.0 - k.i.array())).matrix();
  da.segment(d, d) = (dct.array() * k.c_prev.array() * k.f.array() * (1.0 - k.f.array())).matrix();
  da.segment(2 * d, d) = (dct.array() * k.i.array() * (1.0 - k.g.array().square())).matrix();
  da.segment(3 * d, d) = (dout.array() * k.o.array() * (1.0 - k.o.array())).matrix();
  grad.input_map.weight.noalias() += da * k.x.transpose();
  grad.input_map.bias += da;
  grad.hidden_map.weight.noalias() += da * k.h_prev.transpose();
  grad.hidden_map.bias += da;
  LstmInputGrads out;
  out.dx = cell.input_map.weight.transpose() * da;
  out.dh_prev = cell.hidden_map.weight.transpose() * da;
  out.dc_prev = (dct.array() * k.f.array()).matrix();
  return out;
}

// ---------------------------------------------------------------------------
// Vector quantizer
// ---------------------------------------------------------------------------

/// kInfer: argmax of logits, deterministic. kHard: Gumbel sample, one-hot
/// forward, gradient through the soft probabilities (straight-through).
/// kSoft: forward is the probability-weighted codebook mixture.
enum class QuantMode { kInfer, kHard, kSoft };

struct QuantOptions {
  QuantMode mode = QuantMode::kInfer;
  double temperature = 1.0;
  SeededRng* rng = nullptr;  // noise source for kHard / kSoft; none = noiseless
};

/// Grouped codebook quantizer: a stack of `depth` dense layers (tanh between
/// them) produces G*V logits; group g picks one of V vectors of size D/G and
/// the reconstruction is the concatenation over groups.
struct VectorQuantizer {
  int groups = 1;
  int vars = 1;
  std::vector<DenseMap> stack;
  Mat codebook;  // (G*V) x (D/G), row g*V + k

  VectorQuantizer() = default;
  VectorQuantizer(int dim, int groups_, int vars_, int depth) : groups(groups_), vars(vars_) {
    require(groups >= 1 && vars >= 1 && depth >= 1, "VectorQuantizer: G, V, depth must be >= 1");
    require(dim % groups == 0, "VectorQuantizer: state dimension must be divisible by vq_group");
    for (int l = 0; l + 1 < depth; ++l) stack.emplace_back(dim, dim);
    stack.emplace_back(groups * vars, dim);
    codebook = Mat::Zero(groups * vars, dim / groups);
  }

  int dim() const { return static_cast<int>(codebook.cols()) * groups; }
  int sub_dim() const { return static_cast<int>(codebook.cols()); }
  int depth() const { return static_cast<int>(stack.size()); }

  void init(SeededRng& rng) {
    for (auto& l : stack) l.init_uniform(rng);
    for (Eigen::Index c = 0; c < codebook.cols(); ++c)
      for (Eigen::Index r = 0; r < codebook.rows(); ++r) codebook(r, c) = rng.uniform() * 2.0 - 1.0;
  }

  Vec logits(const Vec& x) const {
    Vec cur = x;
    for (size_t l = 0; l < stack.size(); ++l) {
      cur = stack[l].apply(cur);
      if (l + 1 < stack.size()) cur = cur.array().tanh().matrix();
    }
    return cur;
  }
};

struct QuantCache {
  std::vector<Vec> layer_out;  // activations after each hidden layer (tanh applied)
  Vec input;
  std::vector<Vec> probs;  // per group
  std::vector<int> index;  // per group
  double temperature = 1.0;
  QuantMode mode = QuantMode::kInfer;
};

struct Quantized {
  std::vector<int> code;  // one index per group
  Vec recon;
};

inline Quantized quantize(const VectorQuantizer& q, const Vec& x, const QuantOptions& opt,
                          QuantCache* cache = nullptr) {
  require(x.size() == q.dim(), "vq_quantize: input dimension mismatch");
  const int sd = q.sub_dim();
  Vec cur = x;
  if (cache) {
    cache->input = x;
    cache->layer_out.clear();
    cache->probs.assign(static_cast<size_t>(q.groups), Vec());
    cache->index.assign(static_cast<size_t>(q.groups), 0);
    cache->temperature = opt.temperature;
    cache->mode = opt.mode;
  }
  for (size_t l = 0; l < q.stack.size(); ++l) {
    cur = q.stack[l].apply(cur);
    if (l + 1 < q.stack.size()) {
      cur = cur.array().tanh().matrix();
      if (cache) cache->layer_out.push_back(cur);
    }
  }
  Quantized out;
  out.code.resize(static_cast<size_t>(q.groups));
  out.recon = Vec::Zero(q.dim());
  for (int g = 0; g < q.groups; ++g) {
    Vec lg = cur.segment(g * q.vars, q.vars);
    GumbelSample s;
    if (opt.mode == QuantMode::kInfer) {
      s.index = argmax(lg);
      if (cache) s.probs = softmax(lg / opt.temperature);
    } else {
      s = gumbel_softmax(lg, opt.temperature, opt.rng);
    }
    out.code[static_cast<size_t>(g)] = static_cast<int>(s.index);
    if (opt.mode == QuantMode::kSoft) {
      out.recon.segment(g * sd, sd) = q.codebook.middleRows(g * q.vars, q.vars).transpose() * s.probs;
    } else {
      out.recon.segment(g * sd, sd) = q.codebook.row(g * q.vars + s.index).transpose();
    }
    if (cache) {
      cache->probs[static_cast<size_t>(g)] = std::move(s.probs);
      cache->index[static_cast<size_t>(g)] = static_cast<int>(s.index);
    }
  }
  return out;
}

/// Backward of quantize. The codebook receives gradient through the forward
/// weights (one-hot when hard); the logits always through the soft probs.
inline Vec quantize_backward(const VectorQuantizer& q, const QuantCache& k, const Vec& drecon,
                             VectorQuantizer& grad) {
  require(k.mode != QuantMode::kInfer, "quantize_backward: inference mode has no gradient");
  const int sd = q.sub_dim();
  Vec dlogits(q.groups * q.vars);
  for (int g = 0; g < q.groups; ++g) {
    const Vec& p = k.probs[static_cast<size_t>(g)];
    Vec dseg = drecon.segment(g * sd, sd);
    auto rows = q.codebook.middleRows(g * q.vars, q.vars);
    Vec dprobs = rows * dseg;
    if (k.mode == QuantMode::kSoft) {
      grad.codebook.middleRows(g * q.vars, q.vars).noalias() += p * dseg.transpose();
    } else {
      grad.codebook.row(g * q.vars + k.index[static_cast<size_t>(g)]) += dseg.transpose();
    }
    dlogits.segment(g * q.vars, q.vars) = softmax_backward(p, dprobs, k.temperature);
  }
  Vec d = dlogits;
  for (int l = q.depth() - 1; l >= 0; --l) {
    const Vec& in = (l == 0) ? k.input : k.layer_out[static_cast<size_t>(l - 1)];
    grad.stack[static_cast<size_t>(l)].weight.noalias() += d * in.transpose();
    grad.stack[static_cast<size_t>(l)].bias += d;
    d = q.stack[static_cast<size_t>(l)].weight.transpose() * d;
    if (l > 0) d = (d.array() * (1.0 - in.array().square())).matrix();
  }
  return d;
}

// ---------------------------------------------------------------------------
// Very-limited-context prediction network
// ---------------------------------------------------------------------------

/// Two parallel width-2 convolutions over the label embeddings: one with tanh
/// and bias, one linear and bias-free; the output is their sum.
struct VlcNet {
  Mat embedding;  // (|Y|+1) x E, row 0 is the start / padding symbol
  DenseMap conv_tanh;
  Mat conv_linear;  // D x 2E

  VlcNet() = default;
  VlcNet(int num_outputs, int embed_dim, int out_dim)
      : embedding(Mat::Zero(num_outputs, embed_dim)),
        conv_tanh(out_dim, 2 * embed_dim),
        conv_linear(Mat::Zero(out_dim, 2 * embed_dim)) {}

  int embed_dim() const { return static_cast<int>(embedding.cols()); }

  void init(SeededRng& rng) {
    for (Eigen::Index c = 0; c < embedding.cols(); ++c)
      for (Eigen::Index r = 0; r < embedding.rows(); ++r) embedding(r, c) = rng.normal() * 0.5;
    conv_tanh.init_uniform(rng);
    const double s = 1.0 / std::sqrt(static_cast<double>(conv_linear.cols()));
    for (Eigen::Index c = 0; c < conv_linear.cols(); ++c)
      for (Eigen::Index r = 0; r < conv_linear.rows(); ++r)
        conv_linear(r, c) = (2.0 * rng.uniform() - 1.0) * s;
  }

  Vec window(int older, int newer) const {
    require(older >= 0 && older < embedding.rows() && newer >= 0 && newer < embedding.rows(),
            "vlc_step: label id out of range");
    Vec x(2 * embed_dim());
    x.head(embed_dim()) = embedding.row(older).transpose();
    x.tail(embed_dim()) = embedding.row(newer).transpose();
    return x;
  }
};

struct VlcCache {
  int older = 0, newer = 0;
  Vec x, t;
};

inline Vec vlc_forward(const VlcNet& net, int older, int newer, VlcCache* cache = nullptr) {
  Vec x = net.window(older, newer);
  Vec t = net.conv_tanh.apply(x).array().tanh().matrix();
  Vec g = t + net.conv_linear * x;
  if (cache) {
    cache->older = older;
    cache->newer = newer;
    cache->x = std::move(x);
    cache->t = std::move(t);
  }
  return g;
}

inline void vlc_backward(const VlcNet& net, const VlcCache& k, const Vec& dg, VlcNet& grad) {
  Vec dt = (dg.array() * (1.0 - k.t.array().square())).matrix();
  grad.conv_tanh.weight.noalias() += dt * k.x.transpose();
  grad.conv_tanh.bias += dt;
  grad.conv_linear.noalias() += dg * k.x.transpose();
  Vec dx = net.conv_tanh.weight.transpose() * dt + net.conv_linear.transpose() * dg;
  const int e = net.embed_dim();
  grad.embedding.row(k.older) += dx.head(e).transpose();
  grad.embedding.row(k.newer) += dx.tail(e).transpose();
}

// ---------------------------------------------------------------------------
// Joint network
// ---------------------------------------------------------------------------

/// log_softmax(out(tanh(enc_proj(m) * pred_proj(g)))).
struct JointNetwork {
  DenseMap enc_proj;
  DenseMap pred_proj;
  DenseMap out_proj;

  JointNetwork() = default;
  JointNetwork(int enc_dim, int pred_dim, int joint_dim, int output_size)
      : enc_proj(joint_dim, enc_dim), pred_proj(joint_dim, pred_dim), out_proj(output_size, joint_dim) {}

  void init(SeededRng& rng) {
    enc_proj.init_uniform(rng);
    pred_proj.init_uniform(rng);
    // unit biases: the elementwise product is non-zero at initialization
    pred_proj.bias.setOnes();
    enc_proj.bias.setOnes();
    out_proj.init_uniform(rng);
  }

  /// Joint log-probabilities from already projected encoder / prediction vectors.
  Vec from_projections(const Vec& enc_p, const Vec& pred_p) const {
    Vec hj = (enc_p.array() * pred_p.array()).tanh().matrix();
    return log_softmax(out_proj.weight * hj + out_proj.bias);
  }
};

inline Vec joint(const JointNetwork& jn, const Vec& m_t, const Vec& g_u) {
  return jn.from_projections(jn.enc_proj.apply(m_t), jn.pred_proj.apply(g_u));
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

enum class PredVariant { kLstm, kVqLstm, kVlc };

inline std::string to_string(PredVariant v) {
  switch (v) {
    case PredVariant::kLstm: return "baseline";
    case PredVariant::kVqLstm: return "vq";
    case PredVariant::kVlc: return "vlc";
  }
  return "?";
}

inline PredVariant parse_variant(std::string_view s) {
  if (s == "baseline" || s == "lstm") return PredVariant::kLstm;
  if (s == "vq" || s == "vq_lstm" || s == "vq-t") return PredVariant::kVqLstm;
  if (s == "vlc") return PredVariant::kVlc;
  throw ContractViolation("unknown model variant '" + std::string(s) + "' (baseline | vlc | vq)");
}

struct ModelConfig {
  PredVariant variant = PredVariant::kLstm;
  int feat_dim = 16;
  int enc_hidden = 32;  // per direction; encoder output is 2x this
  int enc_layers = 2;
  int pred_dim = 32;  // D
  int joint_dim = 64;
  int vlc_embed = 64;
  int vq_groups = 2;
  int vq_vars = 8;
  int vq_depth = 1;
  bool joint_from_quantized = true;  // VQ-LSTM: feed codebook reconstruction (else raw h') to the joint

  int enc_dim() const { return 2 * enc_hidden; }

  /// Large quantizer preset: two groups of 640 codewords, one projection layer.
  static ModelConfig large_vq() {
    ModelConfig c;
    c.variant = PredVariant::kVqLstm;
    c.vq_groups = 2;
    c.vq_vars = 640;
    c.vq_depth = 1;
    return c;
  }
};

struct BiLstmLayer {
  LstmCell fwd;
  LstmCell bwd;
};

/// Prediction-network state. For the VQ-LSTM, h and c are always codebook
/// reconstructions and `code` holds the h-groups followed by the c-groups.
/// For the VLC net only the last two labels matter.
struct PredState {
  Vec h, c;
  std::vector<int> code;
  int older = kStartToken;
  int newer = kStartToken;
};

struct PredOutput {
  PredState state;
  Vec g;
};

struct Model {
  ModelConfig config;
  Vocabulary vocab;
  std::vector<BiLstmLayer> encoder;
  Mat embedding;  // (|Y|+1) x D for LSTM / VQ-LSTM; row 0 = start token
  LstmCell pred_cell;
  VectorQuantizer quant_h, quant_c;
  VlcNet vlc;
  JointNetwork joint_net;

  Model() = default;

  Model(const ModelConfig& cfg, Vocabulary v) : config(cfg), vocab(std::move(v)) {
    require(cfg.feat_dim >= 1 && cfg.enc_hidden >= 1 && cfg.enc_layers >= 1 && cfg.pred_dim >= 1 &&
                cfg.joint_dim >= 1,
            "ModelConfig: dimensions must be >= 1");
    const int ny = vocab.output_size();
    int in = cfg.feat_dim;
    for (int l = 0; l < cfg.enc_layers; ++l) {
      encoder.push_back({LstmCell(in, cfg.enc_hidden), LstmCell(in, cfg.enc_hidden)});
      in = cfg.enc_dim();
    }
    if (cfg.variant == PredVariant::kVlc) {
      vlc = VlcNet(ny, cfg.vlc_embed, cfg.pred_dim);
    } else {
      embedding = Mat::Zero(ny, cfg.pred_dim);
      pred_cell = LstmCell(cfg.pred_dim, cfg.pred_dim);
      if (cfg.variant == PredVariant::kVqLstm) {
        quant_h = VectorQuantizer(cfg.pred_dim, cfg.vq_groups, cfg.vq_vars, cfg.vq_depth);
        quant_c = VectorQuantizer(cfg.pred_dim, cfg.vq_groups, cfg.vq_vars, cfg.vq_depth);
      }
    }
    joint_net = JointNetwork(cfg.enc_dim(), cfg.pred_dim, cfg.joint_dim, ny);
  }

  bool is_vq() const { return config.variant == PredVariant::kVqLstm; }

  void init(uint64_t seed) {
    SeededRng rng(seed);
    for (auto& layer : encoder) {
      layer.fwd.init(rng);
      layer.bwd.init(rng);
    }
    if (config.variant == PredVariant::kVlc) {
      vlc.init(rng);
    } else {
      for (Eigen::Index c = 0; c < embedding.cols(); ++c)
        for (Eigen::Index r = 0; r < embedding.rows(); ++r) embedding(r, c) = rng.normal() * 0.5;
      pred_cell.init(rng);
      if (is_vq()) {
        quant_h.init(rng);
        quant_c.init(rng);
      }
    }
    joint_net.init(rng);
  }

  /// Visits every trainable tensor in a fixed order as (name, flat span).
  template <class F>
  void visit(F&& f) {
    auto dense = [&](const std::string& n, DenseMap& m) {
      f(n + ".w", std::span<double>(m.weight.data(), static_cast<size_t>(m.weight.size())));
      f(n + ".b", std::span<double>(m.bias.data(), static_cast<size_t>(m.bias.size())));
    };
    auto mat = [&](const std::string& n, Mat& m) {
      f(n, std::span<double>(m.data(), static_cast<size_t>(m.size())));
    };
    for (size_t l = 0; l < encoder.size(); ++l) {
      const std::string p = "enc" + std::to_string(l);
      dense(p + ".fwd.in", encoder[l].fwd.input_map);
      dense(p + ".fwd.hid", encoder[l].fwd.hidden_map);
      dense(p + ".bwd.in", encoder[l].bwd.input_map);
      dense(p + ".bwd.hid", encoder[l].bwd.hidden_map);
    }
    if (config.variant == PredVariant::kVlc) {
      mat("vlc.embedding", vlc.embedding);
      dense("vlc.conv_tanh", vlc.conv_tanh);
      mat("vlc.conv_linear", vlc.conv_linear);
    } else {
      mat("pred.embedding", embedding);
      dense("pred.in", pred_cell.input_map);
      dense("pred.hid", pred_cell.hidden_map);
      if (is_vq()) {
        for (int which = 0; which < 2; ++which) {
          VectorQuantizer& q = which == 0 ? quant_h : quant_c;
          const std::string p = which == 0 ? "vq_h" : "vq_c";
          for (size_t l = 0; l < q.stack.size(); ++l) dense(p + ".proj" + std::to_string(l), q.stack[l]);
          mat(p + ".codebook", q.codebook);
        }
      }
    }
    dense("joint.enc", joint_net.enc_proj);
    dense("joint.pred", joint_net.pred_proj);
    dense("joint.out", joint_net.out_proj);
  }

  template <class F>
  void visit(F&& f) const {
    const_cast<Model*>(this)->visit([&](const std::string& n, std::span<double> s) {
      f(n, std::span<const double>(s.data(), s.size()));
    });
  }

  /// Same shapes, all parameters zero (gradient accumulator).
  Model zeros_like() const {
    Model z = *this;
    z.visit([](const std::string&, std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
    return z;
  }

  size_t num_parameters() const {
    size_t n = 0;
    visit([&](const std::string&, std::span<const double> s) { n += s.size(); });
    return n;
  }

  // --- inference-mode prediction network -----------------------------------

  PredOutput pred_initial() const {
    PredOutput out;
    const int d = config.pred_dim;
    switch (config.variant) {
      case PredVariant::kLstm:
        out.state.h = Vec::Zero(d);
        out.state.c = Vec::Zero(d);
        out.g = Vec::Zero(d);
        break;
      case PredVariant::kVqLstm: {
        QuantOptions opt;
        Quantized qh = quantize(quant_h, Vec::Zero(d), opt);
        Quantized qc = quantize(quant_c, Vec::Zero(d), opt);
        out.state.h = qh.recon;
        out.state.c = qc.recon;
        out.state.code = qh.code;
        out.state.code.insert(out.state.code.end(), qc.code.begin(), qc.code.end());
        out.g = config.joint_from_quantized ? out.state.h : Vec::Zero(d);
        break;
      }
      case PredVariant::kVlc:
        out.g = vlc_forward(vlc, kStartToken, kStartToken);
        break;
    }
    return out;
  }

  /// One inference step of the prediction network consuming `label`.
  PredOutput pred_step(const PredState& state, int label) const {
    require(label >= 1 && label <= vocab.num_labels(), "pred_step: invalid label id");
    PredOutput out;
    switch (config.variant) {
      case PredVariant::kLstm: {
        LstmState s = lstm_forward(pred_cell, embedding.row(label).transpose(), {state.h, state.c});
        out.g = s.h;
        out.state.h = std::move(s.h);
        out.state.c = std::move(s.c);
        break;
      }
      case PredVariant::kVqLstm: {
        LstmState raw = lstm_forward(pred_cell, embedding.row(label).transpose(), {state.h, state.c});
        QuantOptions opt;
        Quantized qh = quantize(quant_h, raw.h, opt);
        Quantized qc = quantize(quant_c, raw.c, opt);
        out.state.h = qh.recon;
        out.state.c = qc.recon;
        out.state.code = qh.code;
        out.state.code.insert(out.state.code.end(), qc.code.begin(), qc.code.end());
        out.g = config.joint_from_quantized ? out.state.h : raw.h;
        break;
      }
      case PredVariant::kVlc:
        out.state.older = state.newer;
        out.state.newer = label;
        out.g = vlc_forward(vlc, out.state.older, out.state.newer);
        break;
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Free-function forms of the layer steps
// ---------------------------------------------------------------------------

/// Embeds `y_prev` (0 = start token) and runs one LSTM step; g equals new h.
inline std::pair<Vec, LstmState> lstm_step(const LstmCell& cell, const Mat& embedding, int y_prev,
                                           const LstmState& state) {
  require(y_prev >= 0 && y_prev < embedding.rows(), "lstm_step: invalid label id");
  LstmState next = lstm_forward(cell, embedding.row(y_prev).transpose(), state);
  return {next.h, next};
}

struct VqQuantResult {
  std::vector<int> h_code, c_code;
  Vec h_q, c_q;
};

inline VqQuantResult vq_quantize(const VectorQuantizer& qh, const VectorQuantizer& qc, const Vec& h_raw,
                                 const Vec& c_raw, const QuantOptions& opt) {
  Quantized a = quantize(qh, h_raw, opt);
  Quantized b = quantize(qc, c_raw, opt);
  return {std::move(a.code), std::move(b.code), std::move(a.recon), std::move(b.recon)};
}

/// lstm_step followed by vq_quantize (inference mode). Returns the
/// pre-quantization output g and the quantized state with its code.
inline std::pair<Vec, PredState> vq_lstm_step(const Model& model, int y_prev, const PredState& state) {
  require(model.is_vq(), "vq_lstm_step: model has no quantizer");
  auto [g, raw] = lstm_step(model.pred_cell, model.embedding, y_prev, {state.h, state.c});
  VqQuantResult q = vq_quantize(model.quant_h, model.quant_c, raw.h, raw.c, QuantOptions{});
  PredState next;
  next.h = std::move(q.h_q);
  next.c = std::move(q.c_q);
  next.code = std::move(q.h_code);
  next.code.insert(next.code.end(), q.c_code.begin(), q.c_code.end());
  return {g, next};
}

inline Vec vlc_step(const VlcNet& net, std::array<int, 2> last_two) {
  return vlc_forward(net, last_two[0], last_two[1]);
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

struct EncoderCache {
  // [layer][direction][t]
  std::vector<std::array<std::vector<LstmCache>, 2>> steps;
  std::vector<Mat> inputs;  // per layer, T x in
};

/// Stacked bidirectional LSTM; row t of the result is [forward_t ; backward_t].
inline Mat encode(const Model& model, const Mat& features, EncoderCache* cache = nullptr) {
  const Eigen::Index T = features.rows();
  if (T == 0) throw ContractViolation("encode: empty input (T = 0)");
  require(features.cols() == model.config.feat_dim, "encode: feature dimension mismatch");
  const int hd = model.config.enc_hidden;
  if (cache) {
    cache->steps.assign(model.encoder.size(), {});
    cache->inputs.clear();
  }
  Mat in = features;
  for (size_t l = 0; l < model.encoder.size(); ++l) {
    const BiLstmLayer& layer = model.encoder[l];
    Mat out(T, 2 * hd);
    if (cache) {
      cache->inputs.push_back(in);
      cache->steps[l][0].resize(static_cast<size_t>(T));
      cache->steps[l][1].resize(static_cast<size_t>(T));
    }
    LstmState s{Vec::Zero(hd), Vec::Zero(hd)};
    for (Eigen::Index t = 0; t < T; ++t) {
      s = lstm_forward(layer.fwd, in.row(t).transpose(), s,
                       cache ? &cache->steps[l][0][static_cast<size_t>(t)] : nullptr);
      out.row(t).head(hd) = s.h.transpose();
    }
    s = {Vec::Zero(hd), Vec::Zero(hd)};
    for (Eigen::Index t = T - 1; t >= 0; --t) {
      s = lstm_forward(layer.bwd, in.row(t).transpose(), s,
                       cache ? &cache->steps[l][1][static_cast<size_t>(t)] : nullptr);
      out.row(t).tail(hd) = s.h.transpose();
    }
    in = std::move(out);
  }
  return in;
}

/// Backpropagates dL/dm through the encoder, accumulating into `grad`.
inline void encode_backward(const Model& model, const EncoderCache& cache, const Mat& dm, Model& grad) {
  const Eigen::Index T = dm.rows();
  const int hd = model.config.enc_hidden;
  Mat dout = dm;
  for (size_t li = model.encoder.size(); li-- > 0;) {
    const BiLstmLayer& layer = model.encoder[li];
    BiLstmLayer& glayer = grad.encoder[li];
    Mat din = Mat::Zero(T, cache.inputs[li].cols());
    Vec dh = Vec::Zero(hd), dc = Vec::Zero(hd);
    for (Eigen::Index t = T - 1; t >= 0; --t) {
      Vec dht = dh + dout.row(t).head(hd).transpose();
      LstmInputGrads g = lstm_backward(layer.fwd, cache.steps[li][0][static_cast<size_t>(t)], dht, dc, glayer.fwd);
      din.row(t) += g.dx.transpose();
      dh = std::move(g.dh_prev);
      dc = std::move(g.dc_prev);
    }
    dh.setZero();
    dc.setZero();
    for (Eigen::Index t = 0; t < T; ++t) {
      Vec dht = dh + dout.row(t).tail(hd).transpose();
      LstmInputGrads g = lstm_backward(layer.bwd, cache.steps[li][1][static_cast<size_t>(t)], dht, dc, glayer.bwd);
      din.row(t) += g.dx.transpose();
      dh = std::move(g.dh_prev);
      dc = std::move(g.dc_prev);
    }
    dout = std::move(din);
  }
}

}  // namespace vqt
