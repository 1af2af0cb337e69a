// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The VQT Authors.
//
// Binary model checkpoint. Layout (little-endian):
//   "VQTCKPT\0"  u32 version
//   i32 variant, feat_dim, enc_hidden, enc_layers, pred_dim, joint_dim,
//       vlc_embed, vq_groups, vq_vars, vq_depth; u8 joint_from_quantized
//   u32 #symbols, then (u32 length, bytes) per symbol
//   u32 #tensors, then (u32 name length, name, u64 count, count x f64)

#pragma once

#include "vqt/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

namespace vqt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace detail {

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw RuntimeFailure("checkpoint: truncated");
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<uint32_t>(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
  const auto n = get<uint32_t>(is);
  if (n > (1u << 20)) throw RuntimeFailure("checkpoint: implausible string length");
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw RuntimeFailure("checkpoint: truncated");
  return s;
}

}  // namespace detail

constexpr uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& os, const Model& model) {
  using detail::put;
  os.write("VQTCKPT\0", 8);
  put<uint32_t>(os, kCheckpointVersion);
  const ModelConfig& c = model.config;
  for (int v : {static_cast<int>(c.variant), c.feat_dim, c.enc_hidden, c.enc_layers, c.pred_dim, c.joint_dim,
                c.vlc_embed, c.vq_groups, c.vq_vars, c.vq_depth})
    put<int32_t>(os, v);
  put<uint8_t>(os, c.joint_from_quantized ? 1 : 0);
  put<uint32_t>(os, static_cast<uint32_t>(model.vocab.num_labels()));
  for (const auto& s : model.vocab.symbols()) detail::put_string(os, s);
  uint32_t count = 0;
  model.visit([&](const std::string&, std::span<const double>) { ++count; });
  put<uint32_t>(os, count);
  model.visit([&](const std::string& name, std::span<const double> s) {
    detail::put_string(os, name);
    put<uint64_t>(os, s.size());
    os.write(reinterpret_cast<const char*>(s.data()), static_cast<std::streamsize>(s.size() * sizeof(double)));
  });
}

inline Model read_checkpoint(std::istream& is) {
  using detail::get;
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, "VQTCKPT\0", 8) != 0) throw RuntimeFailure("checkpoint: bad magic");
  const auto version = get<uint32_t>(is);
  if (version != kCheckpointVersion)
    throw RuntimeFailure("checkpoint: unsupported version " + std::to_string(version));
  ModelConfig c;
  const int variant = get<int32_t>(is);
  if (variant < 0 || variant > 2) throw RuntimeFailure("checkpoint: bad variant");
  c.variant = static_cast<PredVariant>(variant);
  for (int* f : {&c.feat_dim, &c.enc_hidden, &c.enc_layers, &c.pred_dim, &c.joint_dim, &c.vlc_embed, &c.vq_groups,
                 &c.vq_vars, &c.vq_depth})
    *f = get<int32_t>(is);
  c.joint_from_quantized = get<uint8_t>(is) != 0;
  const auto nsym = get<uint32_t>(is);
  std::vector<std::string> syms;
  for (uint32_t i = 0; i < nsym; ++i) syms.push_back(detail::get_string(is));
  Model model(c, Vocabulary(std::move(syms)));
  const auto count = get<uint32_t>(is);
  uint32_t seen = 0;
  model.visit([&](const std::string& name, std::span<double> s) {
    if (seen++ >= count) throw RuntimeFailure("checkpoint: missing tensor " + name);
    const std::string stored = detail::get_string(is);
    if (stored != name) throw RuntimeFailure("checkpoint: expected tensor " + name + ", found " + stored);
    const auto n = get<uint64_t>(is);
    if (n != s.size()) throw RuntimeFailure("checkpoint: size mismatch for " + name);
    if (!is.read(reinterpret_cast<char*>(s.data()), static_cast<std::streamsize>(n * sizeof(double))))
      throw RuntimeFailure("checkpoint: truncated tensor " + name);
  });
  if (seen != count) throw RuntimeFailure("checkpoint: unexpected extra tensors");
  return model;
}

inline void save_checkpoint(const std::string& path, const Model& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeFailure("cannot write " + path);
  write_checkpoint(os, model);
  if (!os) throw RuntimeFailure("write failed: " + path);
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeFailure("cannot read " + path);
  return read_checkpoint(is);
}

}  // namespace vqt
