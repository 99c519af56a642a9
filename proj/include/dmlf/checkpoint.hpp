// Copyright (c) 2026 the dmlf authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint format. Little-endian throughout; parameter tables are
// sorted by name, so save -> load -> save is byte-identical.
//
// Layout:
//   magic "DMLF" | version u32 | param count u32
//   per param: name (u32 len + bytes) | ndim u32 | dims i32[] | frozen u8 | f32 data
//   has_moments u8 [ step u64 | count u32 | per entry: name, len u32, m f32[], v f32[] ]
//   config JSON (u32 len + bytes)
//   rng seed u64 | rng counter u64

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dmlf/error.hpp"
#include "dmlf/nn.hpp"
#include "dmlf/optim.hpp"

namespace dmlf {

struct CheckpointEntry {
  Shape shape;
  bool frozen = false;
  std::vector<float> data;
};

using CheckpointTable = std::map<std::string, CheckpointEntry>;

struct CheckpointData {
  CheckpointTable params;
  bool has_moments = false;
  AdamWState moments;
  std::string config_json;
  uint64_t rng_seed = 0;
  uint64_t rng_counter = 0;
};

namespace detail {

inline void put_u32(std::ostream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_u64(std::ostream& f, uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }
inline void put_i32(std::ostream& f, int32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_u8(std::ostream& f, uint8_t v) { f.write(reinterpret_cast<const char*>(&v), 1); }
inline void put_str(std::ostream& f, const std::string& s) {
  put_u32(f, static_cast<uint32_t>(s.size()));
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline void put_floats(std::ostream& f, const std::vector<float>& v) {
  f.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 4));
}

inline uint32_t get_u32(std::istream& f) {
  uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  require(f.good(), ErrorCategory::io, "truncated checkpoint");
  return v;
}
inline uint64_t get_u64(std::istream& f) {
  uint64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 8);
  require(f.good(), ErrorCategory::io, "truncated checkpoint");
  return v;
}
inline int32_t get_i32(std::istream& f) {
  int32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  require(f.good(), ErrorCategory::io, "truncated checkpoint");
  return v;
}
inline uint8_t get_u8(std::istream& f) {
  uint8_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 1);
  require(f.good(), ErrorCategory::io, "truncated checkpoint");
  return v;
}
inline std::string get_str(std::istream& f) {
  const uint32_t n = get_u32(f);
  std::string s(n, '\0');
  f.read(s.data(), n);
  require(f.good() || n == 0, ErrorCategory::io, "truncated checkpoint");
  return s;
}
inline std::vector<float> get_floats(std::istream& f, size_t n) {
  std::vector<float> v(n);
  f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 4));
  require(f.good() || n == 0, ErrorCategory::io, "truncated checkpoint");
  return v;
}

}  // namespace detail

inline CheckpointTable snapshot_params(const ParamStore& store) {
  CheckpointTable t;
  for (const auto& [name, tensor] : store.items()) {
    t[name] = CheckpointEntry{tensor.shape(), !tensor.requires_grad(), tensor.data()};
  }
  return t;
}

inline void save_checkpoint(const std::string& path, const CheckpointData& ckpt) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), ErrorCategory::io, "cannot open '" + path + "' for writing");
  f.write("DMLF", 4);
  detail::put_u32(f, 1);  // format version
  detail::put_u32(f, static_cast<uint32_t>(ckpt.params.size()));
  for (const auto& [name, e] : ckpt.params) {
    detail::put_str(f, name);
    detail::put_u32(f, static_cast<uint32_t>(e.shape.size()));
    for (int d : e.shape) detail::put_i32(f, d);
    detail::put_u8(f, e.frozen ? 1 : 0);
    require(e.data.size() == shape_numel(e.shape), ErrorCategory::contract,
            "checkpoint entry '" + name + "' data/shape mismatch");
    detail::put_floats(f, e.data);
  }
  detail::put_u8(f, ckpt.has_moments ? 1 : 0);
  if (ckpt.has_moments) {
    detail::put_u64(f, ckpt.moments.step);
    detail::put_u32(f, static_cast<uint32_t>(ckpt.moments.moments.size()));
    for (const auto& [name, m] : ckpt.moments.moments) {
      detail::put_str(f, name);
      detail::put_u32(f, static_cast<uint32_t>(m.m.size()));
      detail::put_floats(f, m.m);
      detail::put_floats(f, m.v);
    }
  }
  detail::put_str(f, ckpt.config_json);
  detail::put_u64(f, ckpt.rng_seed);
  detail::put_u64(f, ckpt.rng_counter);
  require(f.good(), ErrorCategory::io, "write failed for '" + path + "'");
}

inline CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorCategory::io, "cannot open '" + path + "'");
  char magic[4] = {};
  f.read(magic, 4);
  require(f.good() && std::memcmp(magic, "DMLF", 4) == 0, ErrorCategory::io,
          "'" + path + "' is not a checkpoint (bad magic)");
  const uint32_t version = detail::get_u32(f);
  require(version == 1, ErrorCategory::io,
          "unsupported checkpoint version " + std::to_string(version));
  CheckpointData ckpt;
  const uint32_t count = detail::get_u32(f);
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = detail::get_str(f);
    CheckpointEntry e;
    const uint32_t ndim = detail::get_u32(f);
    for (uint32_t d = 0; d < ndim; ++d) e.shape.push_back(detail::get_i32(f));
    e.frozen = detail::get_u8(f) != 0;
    e.data = detail::get_floats(f, shape_numel(e.shape));
    ckpt.params.emplace(name, std::move(e));
  }
  ckpt.has_moments = detail::get_u8(f) != 0;
  if (ckpt.has_moments) {
    ckpt.moments.step = detail::get_u64(f);
    const uint32_t mcount = detail::get_u32(f);
    for (uint32_t i = 0; i < mcount; ++i) {
      const std::string name = detail::get_str(f);
      const uint32_t len = detail::get_u32(f);
      AdamWState::Moments m;
      m.m = detail::get_floats(f, len);
      m.v = detail::get_floats(f, len);
      ckpt.moments.moments.emplace(name, std::move(m));
    }
  }
  ckpt.config_json = detail::get_str(f);
  ckpt.rng_seed = detail::get_u64(f);
  ckpt.rng_counter = detail::get_u64(f);
  return ckpt;
}

// Copies checkpoint values into matching parameters and applies freeze
// flags. Every store parameter must be present with a matching shape.
inline void apply_checkpoint(ParamStore& store, const CheckpointTable& table) {
  for (auto& [name, tensor] : store.items()) {
    auto it = table.find(name);
    require(it != table.end(), ErrorCategory::io, "checkpoint missing parameter '" + name + "'");
    require(it->second.shape == tensor.shape(), ErrorCategory::dimension,
            "checkpoint shape mismatch for '" + name + "'");
    tensor.data() = it->second.data;
    tensor.set_requires_grad(!it->second.frozen);
  }
}

}  // namespace dmlf
