// Copyright 2026 The FreqAdapter Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "fqa/data.hpp"
#include "fqa/errors.hpp"
#include "fqa/random.hpp"
#include "fqa/tensor_file.hpp"

using namespace fqa;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "fqa_tensor_file_test";
  fs::create_directories(dir);
  return dir / name;
}

void put_u64(std::vector<std::uint8_t>& b, std::size_t at, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

void reseal(std::vector<std::uint8_t>& b) {
  const std::size_t body = b.size() - 8;
  put_u64(b, body, byte_sum(std::span<const std::uint8_t>(b).subspan(0, body)));
}

}  // namespace

TEST(Format, ExactLayout) {
  const auto bytes = encode_tensors({{"ab", Tensor::vector({1.5})}});
  // magic 4 + version 4 + count 4 + len 4 + "ab" 2 + rank 4 + dim 8 + payload 8 + checksum 8
  ASSERT_EQ(bytes.size(), 46u);
  EXPECT_EQ(std::memcmp(bytes.data(), "FQA1", 4), 0);
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[8], 1);
  EXPECT_EQ(bytes[12], 2);
  EXPECT_EQ(bytes[16], 'a');
  EXPECT_EQ(bytes[18], 1);
  EXPECT_EQ(bytes[22], 1);
  double v;
  std::memcpy(&v, bytes.data() + 30, 8);
  EXPECT_EQ(v, 1.5);
  std::uint64_t sum = 0;
  for (std::size_t i = 0; i < 38; ++i) sum += bytes[i];
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) stored |= std::uint64_t{bytes[38 + i]} << (8 * i);
  EXPECT_EQ(stored, sum);
}

TEST(Format, RoundTrip) {
  Rng rng(1);
  NamedTensors in{{"a", rng.normal_tensor({3, 4}, 1.0)}, {"scalar", Tensor::scalar(-2.0)}, {"", Tensor({2, 1, 2})}};
  const NamedTensors out = decode_tensors(encode_tensors(in));
  ASSERT_EQ(out.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(out[i].first, in[i].first);
    EXPECT_EQ(out[i].second, in[i].second);
  }
}

TEST(Format, DistinctErrors) {
  const auto good = encode_tensors({{"x", Tensor::vector({1, 2, 3})}});
  EXPECT_THROW(decode_tensors({}), BadMagicError);
  auto b = good;
  b[0] = 'G';
  EXPECT_THROW(decode_tensors(b), BadMagicError);
  b = good;
  b[4] = 2;
  EXPECT_THROW(decode_tensors(b), VersionError);
  b = good;
  b.resize(good.size() - 12);
  EXPECT_THROW(decode_tensors(b), TruncatedError);
  b = good;
  put_u64(b, 21, 1000);  // dim of tensor "x"
  reseal(b);
  EXPECT_THROW(decode_tensors(b), TruncatedError);
  b = good;
  put_u64(b, 21, ~std::uint64_t{0});
  EXPECT_THROW(decode_tensors(b), DimensionOverflowError);
  b = good;
  b[30] ^= 0x01;
  EXPECT_THROW(decode_tensors(b), ChecksumError);
  b = good;
  b.push_back(0);
  EXPECT_THROW(decode_tensors(b), FormatError);
}

TEST(Files, EmptyFileIsBadMagic) {
  const fs::path p = temp_path("empty.fqa");
  { std::ofstream(p, std::ios::trunc); }
  EXPECT_THROW(read_tensor_file(p), BadMagicError);
  EXPECT_THROW(read_tensor_file(temp_path("does_not_exist.fqa")), IoError);
}

TEST(Files, EmbeddingsRoundTripBitwise) {
  SyntheticSpec s;
  s.n_pairs = 6;
  s.grid_h = s.grid_w = 2;
  s.d_v = 5;
  s.d_t = 3;
  s.captions_per_image = 3;
  const EmbeddingBatch b = generate_synthetic(s);
  const fs::path p = temp_path("emb.fqa");
  save_embeddings(b, p);
  const EmbeddingBatch r = load_embeddings(p);
  EXPECT_EQ(r.visual, b.visual);
  EXPECT_EQ(r.textual, b.textual);
  EXPECT_EQ(r.caption_groups, b.caption_groups);
}

TEST(Files, CheckpointRoundTrip) {
  AdapterConfig c;
  c.d_v = c.d_t = 6;
  c.h = 2;
  c.grid_h = c.grid_w = 4;
  c.init = {InitKind::kSmallRandom, 9, 0.3};
  for (auto mode : {CompositionMode::kFreqOnly, CompositionMode::kFuseParallel}) {
    const AdapterStack s = AdapterStack::create(c, mode);
    const fs::path p = temp_path("ckpt.fqa");
    save_checkpoint(s, p);
    const AdapterStack r = load_checkpoint(p);
    EXPECT_EQ(r.mode, mode);
    EXPECT_EQ(r.config(), c);
    EXPECT_EQ(parameter_checksum(r), parameter_checksum(s));
    const auto a = s.parameters();
    const auto b = r.parameters();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i].tensor, *b[i].tensor);
  }
}

TEST(Files, ChecksumSensitiveToParameters) {
  AdapterConfig c;
  c.init.kind = InitKind::kSmallRandom;
  AdapterStack s = AdapterStack::create(c, CompositionMode::kSpatialOnly);
  const auto before = parameter_checksum(s);
  (*s.parameters()[3].tensor)[0] += 1e-9;
  EXPECT_NE(parameter_checksum(s), before);
}

TEST(Files, CheckpointWithoutHeaderIsRejected) {
  const fs::path p = temp_path("noheader.fqa");
  write_tensor_file(p, {{"freq.scale0.mgfa.w1", Tensor({2, 2})}});
  EXPECT_THROW(load_checkpoint(p), FormatError);
}
