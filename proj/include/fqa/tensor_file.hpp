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

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fqa/adapter.hpp"
#include "fqa/data.hpp"
#include "fqa/tensor.hpp"

namespace fqa {

// Tensor container layout, all integers little-endian:
//
//   "FQA1"                       4 bytes
//   version          u32         = 1
//   tensor count     u32
//   per tensor:
//     name length    u32, then UTF-8 name bytes
//     rank           u32, then rank x u64 dims
//     payload        f64 x product(dims), row-major
//   checksum         u64         sum of all preceding bytes mod 2^64
inline constexpr std::uint32_t kTensorFileVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};
class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};
class DimensionOverflowError : public FormatError {
 public:
  using FormatError::FormatError;
};
class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

// File could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

std::uint64_t byte_sum(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_tensors(const NamedTensors& tensors);
NamedTensors decode_tensors(std::span<const std::uint8_t> bytes);

void write_tensor_file(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors read_tensor_file(const std::filesystem::path& path);

// Embedding dumps hold "visual", "textual" and "caption_image" (the owning
// image index of each caption, stored as f64).
void save_embeddings(const EmbeddingBatch& batch, const std::filesystem::path& path);
EmbeddingBatch load_embeddings(const std::filesystem::path& path);

// Checkpoints hold a "__config__" tensor carrying the UTF-8 bytes of a JSON
// document (one byte per f64 element) followed by the adapter parameters,
// prefixed "freq." or "spatial.".
using Checkpoint = AdapterStack;

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// 64-bit FNV-1a over the little-endian f64 bytes of every parameter, in
// parameter order.
std::uint64_t parameter_checksum(const Adapter& adapter);
std::uint64_t parameter_checksum(const AdapterStack& stack);

}  // namespace fqa
