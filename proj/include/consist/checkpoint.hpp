#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "consist/model.hpp"

namespace consist {

// Versioned binary checkpoints. Base and delta live in separate files so the
// frozen reference model is always recoverable from the base file alone.
//
// Layout: magic (4 bytes), version u32, then u64 counts/dims, then float64
// blobs in declaration order. Everything little-endian.

namespace detail {

constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_u64(std::ofstream& f, std::uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }
inline std::uint64_t read_u64(std::ifstream& f) {
  std::uint64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

inline void write_blob(std::ofstream& f, const std::vector<double>& v) {
  write_u64(f, v.size());
  f.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline std::vector<double> read_blob(std::ifstream& f) {
  std::uint64_t n = read_u64(f);
  std::vector<double> v(n);
  f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  return v;
}

inline void check_header(std::ifstream& f, const char* magic, const std::string& path) {
  char m[4];
  f.read(m, 4);
  if (!f || std::string(m, 4) != magic) throw std::runtime_error("checkpoint: bad magic in " + path);
  std::uint32_t ver = 0;
  f.read(reinterpret_cast<char*>(&ver), 4);
  if (ver != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version in " + path);
}

}  // namespace detail

struct BaseCheckpoint {
  BaseParams base;
  ConditionTable cond;
  std::vector<std::vector<double>> codec_rows;  // fitted projection basis
  std::vector<double> codec_scale;
  std::uint64_t codec_seed = 0;
  // Noise-schedule parameters the base was trained under; downstream phases
  // must rebuild the identical schedule.
  std::uint64_t sched_timesteps = 0;
  double sched_beta_start = 0.0;
  double sched_beta_end = 0.0;
};

inline void save_base(const BaseCheckpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_base: cannot open " + path.string());
  f.write("CDLB", 4);
  std::uint32_t ver = detail::kCheckpointVersion;
  f.write(reinterpret_cast<const char*>(&ver), 4);
  const auto& d = ckpt.base.dims;
  detail::write_u64(f, d.latent);
  detail::write_u64(f, d.time_dim);
  detail::write_u64(f, d.cond_dim);
  detail::write_u64(f, d.hidden);
  detail::write_u64(f, ckpt.codec_seed);
  detail::write_u64(f, ckpt.sched_timesteps);
  f.write(reinterpret_cast<const char*>(&ckpt.sched_beta_start), 8);
  f.write(reinterpret_cast<const char*>(&ckpt.sched_beta_end), 8);
  for (const auto& t : const_cast<BaseParams&>(ckpt.base).params()) detail::write_blob(f, t.data());
  detail::write_blob(f, ckpt.cond.class_emb.data());
  detail::write_blob(f, ckpt.cond.subject_emb.data());
  detail::write_blob(f, ckpt.codec_scale);
  detail::write_u64(f, ckpt.codec_rows.size());
  for (const auto& row : ckpt.codec_rows) detail::write_blob(f, row);
  if (!f) throw std::runtime_error("save_base: short write to " + path.string());
}

inline BaseCheckpoint load_base(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_base: cannot open " + path.string());
  detail::check_header(f, "CDLB", path.string());
  BaseCheckpoint ckpt;
  DenoiserDims d;
  d.latent = detail::read_u64(f);
  d.time_dim = detail::read_u64(f);
  d.cond_dim = detail::read_u64(f);
  d.hidden = detail::read_u64(f);
  ckpt.codec_seed = detail::read_u64(f);
  ckpt.sched_timesteps = detail::read_u64(f);
  f.read(reinterpret_cast<char*>(&ckpt.sched_beta_start), 8);
  f.read(reinterpret_cast<char*>(&ckpt.sched_beta_end), 8);
  ckpt.base.dims = d;
  ckpt.base.w1 = Tensor::from({d.hidden, d.input_dim()}, detail::read_blob(f), false);
  ckpt.base.b1 = Tensor::from({d.hidden}, detail::read_blob(f), false);
  ckpt.base.w2 = Tensor::from({d.hidden, d.hidden}, detail::read_blob(f), false);
  ckpt.base.b2 = Tensor::from({d.hidden}, detail::read_blob(f), false);
  ckpt.base.w3 = Tensor::from({d.latent, d.hidden}, detail::read_blob(f), false);
  ckpt.base.b3 = Tensor::from({d.latent}, detail::read_blob(f), false);
  ckpt.cond.class_emb = Tensor::from({d.cond_dim}, detail::read_blob(f), false);
  ckpt.cond.subject_emb = Tensor::from({d.cond_dim}, detail::read_blob(f), false);
  ckpt.codec_scale = detail::read_blob(f);
  std::uint64_t n_rows = detail::read_u64(f);
  for (std::uint64_t i = 0; i < n_rows; ++i) ckpt.codec_rows.push_back(detail::read_blob(f));
  if (!f) throw std::runtime_error("load_base: truncated file " + path.string());
  return ckpt;
}

struct DeltaCheckpoint {
  LoraDelta delta;
  Tensor subject_emb;
};

inline void save_delta(const DeltaCheckpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_delta: cannot open " + path.string());
  f.write("CDLD", 4);
  std::uint32_t ver = detail::kCheckpointVersion;
  f.write(reinterpret_cast<const char*>(&ver), 4);
  detail::write_u64(f, ckpt.delta.rank);
  double scaling = ckpt.delta.scaling;
  f.write(reinterpret_cast<const char*>(&scaling), 8);
  detail::write_u64(f, ckpt.delta.layers.size());
  for (const auto& layer : ckpt.delta.layers) {
    detail::write_u64(f, layer.a.shape()[1]);  // in
    detail::write_u64(f, layer.b.shape()[0]);  // out
    detail::write_blob(f, layer.a.data());
    detail::write_blob(f, layer.b.data());
  }
  detail::write_blob(f, ckpt.subject_emb.data());
  if (!f) throw std::runtime_error("save_delta: short write to " + path.string());
}

inline DeltaCheckpoint load_delta(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_delta: cannot open " + path.string());
  detail::check_header(f, "CDLD", path.string());
  DeltaCheckpoint ckpt;
  ckpt.delta.rank = detail::read_u64(f);
  f.read(reinterpret_cast<char*>(&ckpt.delta.scaling), 8);
  std::uint64_t n_layers = detail::read_u64(f);
  for (std::uint64_t i = 0; i < n_layers; ++i) {
    std::uint64_t in = detail::read_u64(f);
    std::uint64_t out = detail::read_u64(f);
    LoraLayer layer;
    layer.a = Tensor::from({ckpt.delta.rank, in}, detail::read_blob(f), false);
    layer.b = Tensor::from({out, ckpt.delta.rank}, detail::read_blob(f), false);
    ckpt.delta.layers.push_back(std::move(layer));
  }
  std::vector<double> se = detail::read_blob(f);
  std::size_t se_n = se.size();
  ckpt.subject_emb = Tensor::from({se_n}, std::move(se), false);
  if (!f) throw std::runtime_error("load_delta: truncated file " + path.string());
  return ckpt;
}

}  // namespace consist
