// Copyright 2026 The ResDTA Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "resdta/error.hpp"
#include "resdta/model.hpp"

namespace resdta {

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"smiles_len", c.smiles_len},
                     {"protein_len", c.protein_len},
                     {"embed_dim", c.embed_dim},
                     {"smiles_vocab", c.smiles_vocab},
                     {"protein_vocab", c.protein_vocab},
                     {"stream_filters", c.stream_filters},
                     {"combined_filters", c.combined_filters},
                     {"kernel_size", c.kernel_size},
                     {"stride", c.stride},
                     {"padding", c.padding},
                     {"dilation", c.dilation},
                     {"stream_repr_dim", c.stream_repr_dim},
                     {"combined_repr_dim", c.combined_repr_dim},
                     {"fc_dims", c.fc_dims},
                     {"dropout_p", c.dropout_p},
                     {"use_skip", c.use_skip}};
}

/// Missing keys keep their defaults, so partial override objects work.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("smiles_len", c.smiles_len);
  get("protein_len", c.protein_len);
  get("embed_dim", c.embed_dim);
  get("smiles_vocab", c.smiles_vocab);
  get("protein_vocab", c.protein_vocab);
  get("stream_filters", c.stream_filters);
  get("combined_filters", c.combined_filters);
  get("kernel_size", c.kernel_size);
  get("stride", c.stride);
  get("padding", c.padding);
  get("dilation", c.dilation);
  get("stream_repr_dim", c.stream_repr_dim);
  get("combined_repr_dim", c.combined_repr_dim);
  get("fc_dims", c.fc_dims);
  get("dropout_p", c.dropout_p);
  get("use_skip", c.use_skip);
}

// Checkpoint layout, all integers little-endian:
//   magic "RDTACKPT" | u32 version | u8 scalar bytes (4 or 8)
//   u64 len + ModelConfig as JSON text | u64 epoch | u64 tensor count
//   per tensor: u64 len + name | u64 rows | u64 cols | rows*cols IEEE-754
//   values in column-major order.
inline constexpr char kCheckpointMagic[8] = {'R', 'D', 'T', 'A', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  ModelParams<T> params;
  std::uint64_t epoch = 0;
};

namespace detail {

class LeWriter {
 public:
  explicit LeWriter(std::ostream& out) : out_(out) {}

  template <typename U>
  void put(U value) {
    static_assert(std::is_unsigned_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out_.put(static_cast<char>(static_cast<unsigned char>(value >> (8 * i))));
    }
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint64_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void put_real(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void put_real(double v) { put(std::bit_cast<std::uint64_t>(v)); }

 private:
  std::ostream& out_;
};

class LeReader {
 public:
  LeReader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  template <typename U>
  U get() {
    static_assert(std::is_unsigned_v<U>);
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      const int c = in_.get();
      if (c == std::char_traits<char>::eof()) truncated();
      value |= static_cast<U>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return value;
  }
  std::string get_string(std::uint64_t max_len = 1u << 24) {
    const auto n = get<std::uint64_t>();
    if (n > max_len) throw Error(ErrorKind::kIo, path_ + ": corrupt string length");
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::uint64_t>(in_.gcount()) != n) truncated();
    return s;
  }
  void get_bytes(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) truncated();
  }

  [[noreturn]] void truncated() const { throw Error(ErrorKind::kIo, path_ + ": truncated checkpoint"); }

 private:
  std::istream& in_;
  std::string path_;
};

}  // namespace detail

template <typename T>
void save_checkpoint(const ModelParams<T>& params, const std::string& path, std::uint64_t epoch = 0) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write checkpoint " + path);
  detail::LeWriter w(out);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint8_t>(sizeof(T)));
  w.put_string(nlohmann::json(params.config).dump());
  w.put(epoch);
  std::uint64_t count = 0;
  for_each_tensor(params, [&](const std::string&, const Mat<T>&) { ++count; });
  w.put(count);
  for_each_tensor(params, [&](const std::string& name, const Mat<T>& m) {
    w.put_string(name);
    w.put(static_cast<std::uint64_t>(m.rows()));
    w.put(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) w.put_real(m.data()[i]);
  });
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path);
}

/// Reads a checkpoint written by save_checkpoint. Values stored at another
/// precision are converted. With `expected` set, a differing stored config
/// raises ConfigMismatch.
template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path, const std::optional<ModelConfig>& expected = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open checkpoint " + path);
  detail::LeReader r(in, path);
  char magic[sizeof(kCheckpointMagic)];
  r.get_bytes(magic, sizeof(magic));
  if (!std::equal(std::begin(magic), std::end(magic), std::begin(kCheckpointMagic))) {
    throw Error(ErrorKind::kIo, path + ": not a checkpoint file");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::kVersionMismatch, path + ": format version " + std::to_string(version) +
                                                 ", expected " + std::to_string(kCheckpointVersion));
  }
  const auto scalar_bytes = r.get<std::uint8_t>();
  if (scalar_bytes != 4 && scalar_bytes != 8) throw Error(ErrorKind::kIo, path + ": bad scalar width");

  ModelConfig config;
  try {
    config = nlohmann::json::parse(r.get_string()).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kIo, path + ": bad embedded config: " + e.what());
  }
  if (expected && !(*expected == config)) {
    throw Error(ErrorKind::kConfigMismatch, path + ": checkpoint config differs from the requested model config");
  }

  Checkpoint<T> ckpt;
  ckpt.params = zero_params<T>(config);
  ckpt.epoch = r.get<std::uint64_t>();
  std::uint64_t expected_count = 0;
  for_each_tensor(ckpt.params, [&](const std::string&, Mat<T>&) { ++expected_count; });
  if (r.get<std::uint64_t>() != expected_count) throw Error(ErrorKind::kIo, path + ": tensor count mismatch");

  for_each_tensor(ckpt.params, [&](const std::string& name, Mat<T>& m) {
    if (r.get_string() != name) throw Error(ErrorKind::kIo, path + ": expected tensor " + name);
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (rows != static_cast<std::uint64_t>(m.rows()) || cols != static_cast<std::uint64_t>(m.cols())) {
      throw Error(ErrorKind::kIo, path + ": shape mismatch for " + name);
    }
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      if (scalar_bytes == 4) {
        m.data()[i] = static_cast<T>(std::bit_cast<float>(r.get<std::uint32_t>()));
      } else {
        m.data()[i] = static_cast<T>(std::bit_cast<double>(r.get<std::uint64_t>()));
      }
    }
  });
  return ckpt;
}

}  // namespace resdta
