// Copyright 2026 The Swarmtrain Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

// Lossy tensor codecs for gradient/parameter exchange and optimizer-state
// storage.
//
// Three schemes share one chunk container:
//   * Q8 blockwise absmax: each block of `block_size` elements stores one
//     binary32 scale and one signed byte per element. The scale is
//     absmax/127 rounded down to a 17-bit significand, which makes
//     `code * scale` exact in binary32 and gives the hard bound
//     |x - decode(encode(x))| <= scale / 2 for every element.
//   * F16: IEEE binary16 with round-to-nearest-even; values beyond the
//     largest finite half (65504) are rejected.
//   * F32: raw binary32, the lossless path.
//
// Wire layout (little-endian):
//   magic "TQC1" | scheme u8 | reserved u8[3] | num_elements u64 |
//   block_size u32 | scale_count u32 | scales f32[scale_count] | payload

#ifndef SWARM_TENSOR_CODEC_HPP_
#define SWARM_TENSOR_CODEC_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace swarm::codec {

struct TensorBuf {
  std::vector<float> data;
  std::vector<std::size_t> shape;

  // Flat 1-D tensor.
  static TensorBuf Vector(std::vector<float> values);

  std::size_t size() const { return data.size(); }
  // Throws kShapeMismatch when product(shape) != data.size() or a dim is 0.
  void CheckShape() const;
};

enum class Scheme : std::uint8_t {
  kQ8Blockwise = 1,
  kF16 = 2,
  kF32 = 3,
};

const char* SchemeName(Scheme s);

struct QuantizedChunk {
  Scheme scheme = Scheme::kF32;
  std::uint64_t num_elements = 0;
  std::uint32_t block_size = 0;  // Q8 only
  std::vector<float> scales;     // Q8 only, one per block
  std::vector<std::uint8_t> payload;

  // Structural invariants; throws kMalformedChunk.
  void Validate() const;
};

struct CodecPolicy {
  std::uint64_t q8_threshold = 65536;
  std::uint32_t block_size = 4096;
  // Forces F32 for every tensor regardless of size.
  bool lossless = false;

  void Validate() const;
};

inline constexpr std::size_t kChunkHeaderBytes = 24;

Scheme SelectScheme(std::uint64_t n, const CodecPolicy& policy);

QuantizedChunk QuantizeQ8(std::span<const float> x, std::uint32_t block_size);
QuantizedChunk QuantizeQ8(const TensorBuf& t, std::uint32_t block_size);
std::vector<float> DequantizeQ8(const QuantizedChunk& c);

QuantizedChunk EncodeF16(std::span<const float> x);
QuantizedChunk EncodeF16(const TensorBuf& t);
std::vector<float> DecodeF16(const QuantizedChunk& c);

QuantizedChunk EncodeF32(std::span<const float> x);
std::vector<float> DecodeF32(const QuantizedChunk& c);

// Picks the scheme with SelectScheme(x.size(), policy) and encodes.
QuantizedChunk Encode(std::span<const float> x, const CodecPolicy& policy);
// Dispatches on c.scheme.
std::vector<float> Decode(const QuantizedChunk& c);
TensorBuf DecodeTensor(const QuantizedChunk& c);

// Serialized size of a chunk, header included.
std::uint64_t EncodedSize(Scheme scheme, std::uint64_t n,
                          std::uint32_t block_size);

std::vector<std::uint8_t> Serialize(const QuantizedChunk& c);
void SerializeInto(const QuantizedChunk& c, std::vector<std::uint8_t>* out);
// Parses one chunk from the front of `bytes`; `consumed` receives its length.
QuantizedChunk Deserialize(std::span<const std::uint8_t> bytes,
                           std::size_t* consumed = nullptr);

// binary16 conversions. FloatToHalf requires |x| <= 65504 and finite input.
std::uint16_t FloatToHalf(float x);
float HalfToFloat(std::uint16_t h);

// Largest absolute value in `x` (0 for empty input).
float AbsMax(std::span<const float> x);

}  // namespace swarm::codec

#endif  // SWARM_TENSOR_CODEC_HPP_
