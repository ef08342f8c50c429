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

#include "resdta/checkpoint.hpp"

#include <gtest/gtest.h>

#include <filesystem>

#include "test_support.hpp"

namespace resdta {
namespace {

using testing::TempDir;
using testing::tiny_config;

ErrorKind load_error(const std::string& path, const std::optional<ModelConfig>& expected = std::nullopt) {
  try {
    load_checkpoint<float>(path, expected);
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "load succeeded";
  return ErrorKind::kInvalidArgument;
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  TempDir dir;
  const auto params = init_params<float>(tiny_config(), 77);
  save_checkpoint(params, dir.file("a.ckpt"), 42);
  const auto loaded = load_checkpoint<float>(dir.file("a.ckpt"), tiny_config());
  EXPECT_EQ(loaded.epoch, 42u);
  EXPECT_EQ(loaded.params.config, params.config);
  for_each_tensor_pair(params, loaded.params, [](const std::string& name, const Mat<float>& a, const Mat<float>& b) {
    ASSERT_EQ(a.rows(), b.rows()) << name;
    EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())), 0) << name;
  });
}

TEST(Checkpoint, DoubleRoundTripAndCrossPrecisionLoad) {
  TempDir dir;
  const auto params = init_params<double>(tiny_config(), 5);
  save_checkpoint(params, dir.file("d.ckpt"));
  const auto same = load_checkpoint<double>(dir.file("d.ckpt"));
  for_each_tensor_pair(params, same.params,
                       [](const std::string& name, const Mat<double>& a, const Mat<double>& b) { EXPECT_TRUE(a == b) << name; });
  const auto narrowed = load_checkpoint<float>(dir.file("d.ckpt"));
  EXPECT_FLOAT_EQ(narrowed.params.fc[0].weight(0, 0), static_cast<float>(params.fc[0].weight(0, 0)));
}

TEST(Checkpoint, ConfigMismatch) {
  TempDir dir;
  save_checkpoint(init_params<float>(tiny_config(), 1), dir.file("a.ckpt"));
  ModelConfig other = tiny_config();
  other.use_skip = false;
  EXPECT_EQ(load_error(dir.file("a.ckpt"), other), ErrorKind::kConfigMismatch);
}

TEST(Checkpoint, TruncatedFileIsIoError) {
  TempDir dir;
  save_checkpoint(init_params<float>(tiny_config(), 1), dir.file("a.ckpt"));
  const auto size = std::filesystem::file_size(dir.file("a.ckpt"));
  for (auto cut : {size - 1, size / 2, std::uintmax_t{10}, std::uintmax_t{0}}) {
    std::filesystem::copy_file(dir.file("a.ckpt"), dir.file("t.ckpt"), std::filesystem::copy_options::overwrite_existing);
    std::filesystem::resize_file(dir.file("t.ckpt"), cut);
    EXPECT_EQ(load_error(dir.file("t.ckpt")), ErrorKind::kIo) << "cut at " << cut;
  }
  EXPECT_EQ(load_error(dir.file("missing.ckpt")), ErrorKind::kIo);
}

TEST(Checkpoint, VersionMismatch) {
  TempDir dir;
  save_checkpoint(init_params<float>(tiny_config(), 1), dir.file("a.ckpt"));
  std::fstream f(dir.file("a.ckpt"), std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(8);
  f.put(static_cast<char>(99));
  f.close();
  EXPECT_EQ(load_error(dir.file("a.ckpt")), ErrorKind::kVersionMismatch);
}

TEST(Checkpoint, HeaderIsLittleEndian) {
  TempDir dir;
  save_checkpoint(init_params<float>(tiny_config(), 1), dir.file("a.ckpt"), 0x0102);
  std::ifstream in(dir.file("a.ckpt"), std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  ASSERT_GT(bytes.size(), 13u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "RDTACKPT");
  EXPECT_EQ(bytes[8], 1);  // version, low byte first
  EXPECT_EQ(bytes[9], 0);
  EXPECT_EQ(bytes[12], 4);  // float32 payload
}

TEST(ModelConfigJson, RoundTripAndPartialOverride) {
  ModelConfig c = tiny_config();
  c.use_skip = false;
  EXPECT_EQ(nlohmann::json(c).get<ModelConfig>(), c);
  const auto partial = nlohmann::json::parse(R"({"kernel_size": 5})").get<ModelConfig>();
  EXPECT_EQ(partial.kernel_size, 5u);
  EXPECT_EQ(partial.embed_dim, 128u);
}

}  // namespace
}  // namespace resdta
