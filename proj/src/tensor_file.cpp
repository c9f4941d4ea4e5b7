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

#include "fqa/tensor_file.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include "fqa/errors.hpp"
#include "fqa/json.hpp"

namespace fqa {

namespace {

constexpr std::uint8_t kMagic[4] = {'F', 'Q', 'A', '1'};
constexpr const char* kConfigTensor = "__config__";

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }

  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : buf(b) {}

  void need(std::size_t n, const char* what) const {
    if (buf.size() - pos < n) {
      throw TruncatedError(std::string("truncated payload while reading ") + what + " at byte " + std::to_string(pos));
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  std::size_t remaining() const { return buf.size() - pos; }

  std::span<const std::uint8_t> buf;
  std::size_t pos = 0;
};

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading '" + path.string() + "'");
  return bytes;
}

const Tensor& find(const NamedTensors& tensors, const std::string& name) {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw FormatError("missing tensor '" + name + "'");
}

Tensor string_tensor(const std::string& s) {
  std::vector<double> v(s.begin(), s.end());
  for (double& x : v) x = static_cast<double>(static_cast<unsigned char>(x));
  return Tensor::vector(std::move(v));
}

std::string tensor_string(const Tensor& t) {
  std::string s;
  s.reserve(t.numel());
  for (double v : t.data()) {
    if (v < 0.0 || v > 255.0 || v != std::floor(v)) throw FormatError("config tensor holds a non-byte value");
    s.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  }
  return s;
}

}  // namespace

std::uint64_t byte_sum(std::span<const std::uint8_t> bytes) {
  std::uint64_t s = 0;
  for (std::uint8_t b : bytes) s += b;
  return s;
}

std::vector<std::uint8_t> encode_tensors(const NamedTensors& tensors) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kTensorFileVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    for (double v : t.data()) w.f64(v);
  }
  w.u64(byte_sum(w.out));
  return std::move(w.out);
}

NamedTensors decode_tensors(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw BadMagicError("bad magic: not an FQA1 tensor file");
  }
  Reader r(bytes);
  r.pos = 4;
  const std::uint32_t version = r.u32("version");
  if (version != kTensorFileVersion) {
    throw VersionError("unsupported tensor file version " + std::to_string(version) + " (expected " +
                       std::to_string(kTensorFileVersion) + ")");
  }
  const std::uint32_t count = r.u32("tensor count");
  NamedTensors out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32("name length");
    r.need(name_len, "name");
    std::string name(reinterpret_cast<const char*>(bytes.data() + r.pos), name_len);
    r.pos += name_len;
    const std::uint32_t rank = r.u32("rank");
    if (rank > 64) throw DimensionOverflowError("tensor '" + name + "' declares rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const std::uint64_t d = r.u64("dims");
      if (d == 0) throw FormatError("tensor '" + name + "' has a zero dimension");
      if (numel > std::numeric_limits<std::uint64_t>::max() / 8 / d) {
        throw DimensionOverflowError("tensor '" + name + "' dimensions overflow the element count");
      }
      numel *= d;
      shape.push_back(static_cast<std::size_t>(d));
    }
    if (numel * 8 > r.remaining()) {
      throw TruncatedError("tensor '" + name + "' declares " + std::to_string(numel) +
                           " elements but the payload is shorter");
    }
    std::vector<double> data(static_cast<std::size_t>(numel));
    for (auto& v : data) v = std::bit_cast<double>(r.u64("payload"));
    try {
      out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    } catch (const ValueError& e) {
      throw FormatError(std::string("invalid tensor payload: ") + e.what());
    }
  }
  const std::size_t body = r.pos;
  const std::uint64_t stored = r.u64("checksum");
  if (stored != byte_sum(bytes.subspan(0, body))) throw ChecksumError("checksum mismatch");
  if (r.remaining() != 0) throw FormatError("trailing bytes after checksum");
  return out;
}

void write_tensor_file(const std::filesystem::path& path, const NamedTensors& tensors) {
  const auto bytes = encode_tensors(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("error writing '" + path.string() + "'");
}

NamedTensors read_tensor_file(const std::filesystem::path& path) { return decode_tensors(read_all(path)); }

void save_embeddings(const EmbeddingBatch& batch, const std::filesystem::path& path) {
  batch.validate();
  Tensor owner(Shape{batch.captions()});
  const auto own = batch.caption_owner();
  for (std::size_t c = 0; c < own.size(); ++c) owner[c] = static_cast<double>(own[c]);
  write_tensor_file(path, {{"visual", batch.visual}, {"textual", batch.textual}, {"caption_image", owner}});
}

EmbeddingBatch load_embeddings(const std::filesystem::path& path) {
  const NamedTensors tensors = read_tensor_file(path);
  EmbeddingBatch batch;
  batch.visual = find(tensors, "visual");
  batch.textual = find(tensors, "textual");
  const Tensor& owner = find(tensors, "caption_image");
  if (batch.visual.rank() != 3 || batch.textual.rank() != 3) throw FormatError("embedding tensors must be rank 3");
  if (owner.rank() != 1 || owner.numel() != batch.captions()) {
    throw FormatError("caption_image must hold one entry per caption");
  }
  batch.caption_groups.assign(batch.images(), {});
  for (std::size_t c = 0; c < owner.numel(); ++c) {
    const double v = owner[c];
    if (v < 0.0 || v != std::floor(v) || v >= static_cast<double>(batch.images())) {
      throw FormatError("caption " + std::to_string(c) + " has invalid image index");
    }
    batch.caption_groups[static_cast<std::size_t>(v)].push_back(c);
  }
  try {
    batch.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("inconsistent embedding file: ") + e.what());
  }
  return batch;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (!ckpt.freq && !ckpt.spatial) throw ConfigError("checkpoint holds no adapter");
  json header{{"format", "freqadapter-checkpoint"},
              {"composition", std::string(to_string(ckpt.mode))},
              {"config", ckpt.config()},
              {"has_freq", ckpt.freq.has_value()},
              {"has_spatial", ckpt.spatial.has_value()}};
  NamedTensors tensors;
  tensors.emplace_back(kConfigTensor, string_tensor(header.dump()));
  auto add = [&](const Adapter& a, const std::string& prefix) {
    for (const auto& p : a.parameters()) tensors.emplace_back(prefix + p.name, *p.tensor);
  };
  if (ckpt.freq) add(*ckpt.freq, "freq.");
  if (ckpt.spatial) add(*ckpt.spatial, "spatial.");
  write_tensor_file(path, tensors);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const NamedTensors tensors = read_tensor_file(path);
  json header;
  try {
    header = json::parse(tensor_string(find(tensors, kConfigTensor)));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  Checkpoint ckpt;
  try {
    ckpt.mode = composition_from_string(header.at("composition").get<std::string>());
    const AdapterConfig cfg = header.at("config").get<AdapterConfig>();
    auto restore = [&](Domain d, const std::string& prefix) {
      Adapter a(cfg, d);
      for (auto& p : a.parameters()) {
        const Tensor& t = find(tensors, prefix + p.name);
        if (t.shape() != p.tensor->shape()) {
          throw FormatError("parameter '" + prefix + p.name + "' has shape " + shape_string(t.shape()) +
                            ", expected " + shape_string(p.tensor->shape()));
        }
        *p.tensor = t;
      }
      return a;
    };
    if (header.at("has_freq").get<bool>()) ckpt.freq = restore(Domain::kFrequency, "freq.");
    if (header.at("has_spatial").get<bool>()) ckpt.spatial = restore(Domain::kSpatial, "spatial.");
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header incomplete: ") + e.what());
  }
  if (!ckpt.freq && !ckpt.spatial) throw FormatError("checkpoint holds no adapter");
  return ckpt;
}

namespace {

void fnv1a(std::uint64_t& h, const Adapter& adapter) {
  for (const auto& p : adapter.parameters()) {
    for (double v : p.tensor->data()) {
      const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xFF;
        h *= 0x100000001b3ULL;
      }
    }
  }
}

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

}  // namespace

std::uint64_t parameter_checksum(const Adapter& adapter) {
  std::uint64_t h = kFnvOffset;
  fnv1a(h, adapter);
  return h;
}

std::uint64_t parameter_checksum(const AdapterStack& stack) {
  std::uint64_t h = kFnvOffset;
  if (stack.freq) fnv1a(h, *stack.freq);
  if (stack.spatial) fnv1a(h, *stack.spatial);
  return h;
}

}  // namespace fqa
