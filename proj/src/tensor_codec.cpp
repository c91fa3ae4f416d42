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

#include "swarm/tensor_codec.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>

#include "swarm/error.hpp"
#include "swarm/wire.hpp"

namespace swarm::codec {
namespace {

constexpr char kChunkMagic[] = "TQC1";
constexpr std::uint32_t kHalfMaxBits = 0x477fe000;  // 65504.0f
// Low significand bits cleared from Q8 scales: 24 - 7 = 17 bits remain so
// that a 7-bit code times the scale fits binary32 exactly.
constexpr std::uint32_t kScaleTruncMask = ~((1u << 7) - 1u);

void CheckFinite(std::span<const float> x) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) {
      throw Error(ErrorCode::kNonFiniteInput,
                  "element " + std::to_string(i) + " is not finite");
    }
  }
}

std::uint64_t CeilDiv(std::uint64_t a, std::uint64_t b) {
  return a / b + (a % b != 0 ? 1 : 0);
}

float BlockScale(float absmax) {
  float s = absmax / 127.0f;
  if (s == 0.0f) return std::numeric_limits<float>::denorm_min();
  if (s >= std::numeric_limits<float>::min()) {
    s = std::bit_cast<float>(std::bit_cast<std::uint32_t>(s) & kScaleTruncMask);
  }
  return s;
}

}  // namespace

TensorBuf TensorBuf::Vector(std::vector<float> values) {
  TensorBuf t;
  t.shape = {values.size()};
  t.data = std::move(values);
  return t;
}

void TensorBuf::CheckShape() const {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw Error(ErrorCode::kShapeMismatch, "zero dimension");
    n *= d;
  }
  if (shape.empty()) n = data.empty() ? 0 : 1;
  if (n != data.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "shape product " + std::to_string(n) + " != data length " +
                    std::to_string(data.size()));
  }
}

const char* SchemeName(Scheme s) {
  switch (s) {
    case Scheme::kQ8Blockwise: return "q8";
    case Scheme::kF16: return "f16";
    case Scheme::kF32: return "f32";
  }
  return "?";
}

void QuantizedChunk::Validate() const {
  auto fail = [](const std::string& m) {
    throw Error(ErrorCode::kMalformedChunk, m);
  };
  switch (scheme) {
    case Scheme::kQ8Blockwise: {
      if (block_size == 0) fail("q8 block_size is 0");
      if (scales.size() != CeilDiv(num_elements, block_size)) {
        fail("q8 scale count " + std::to_string(scales.size()) +
             " does not match ceil(n/block)");
      }
      if (payload.size() != num_elements) fail("q8 payload length mismatch");
      for (float s : scales) {
        if (!(s >= 0.0f) || !std::isfinite(s)) fail("q8 scale negative or not finite");
      }
      break;
    }
    case Scheme::kF16:
      if (!scales.empty()) fail("f16 chunk carries scales");
      if (payload.size() != 2 * num_elements) fail("f16 payload length mismatch");
      break;
    case Scheme::kF32:
      if (!scales.empty()) fail("f32 chunk carries scales");
      if (payload.size() != 4 * num_elements) fail("f32 payload length mismatch");
      break;
    default:
      fail("unknown scheme " + std::to_string(static_cast<int>(scheme)));
  }
}

void CodecPolicy::Validate() const {
  if (q8_threshold < 1) throw Error(ErrorCode::kInvalidConfig, "q8_threshold < 1");
  if (block_size < 1) throw Error(ErrorCode::kInvalidConfig, "block_size < 1");
}

Scheme SelectScheme(std::uint64_t n, const CodecPolicy& policy) {
  if (policy.lossless) return Scheme::kF32;
  return n >= policy.q8_threshold ? Scheme::kQ8Blockwise : Scheme::kF16;
}

float AbsMax(std::span<const float> x) {
  float m = 0.0f;
  for (float v : x) m = std::max(m, std::fabs(v));
  return m;
}

QuantizedChunk QuantizeQ8(std::span<const float> x, std::uint32_t block_size) {
  if (block_size == 0) throw Error(ErrorCode::kInvalidConfig, "block_size < 1");
  CheckFinite(x);
  QuantizedChunk c;
  c.scheme = Scheme::kQ8Blockwise;
  c.num_elements = x.size();
  c.block_size = block_size;
  c.scales.reserve(CeilDiv(x.size(), block_size));
  c.payload.resize(x.size());
  for (std::size_t begin = 0; begin < x.size(); begin += block_size) {
    const std::size_t end = std::min<std::size_t>(begin + block_size, x.size());
    const float absmax = AbsMax(x.subspan(begin, end - begin));
    if (absmax == 0.0f) {
      c.scales.push_back(0.0f);
      std::fill(c.payload.begin() + begin, c.payload.begin() + end, 0);
      continue;
    }
    const float scale = BlockScale(absmax);
    c.scales.push_back(scale);
    const double inv = static_cast<double>(scale);
    for (std::size_t i = begin; i < end; ++i) {
      // nearbyint honours the default round-half-to-even mode.
      double q = std::nearbyint(static_cast<double>(x[i]) / inv);
      q = std::clamp(q, -127.0, 127.0);
      c.payload[i] = static_cast<std::uint8_t>(static_cast<std::int8_t>(q));
    }
  }
  return c;
}

QuantizedChunk QuantizeQ8(const TensorBuf& t, std::uint32_t block_size) {
  t.CheckShape();
  return QuantizeQ8(std::span<const float>(t.data), block_size);
}

std::vector<float> DequantizeQ8(const QuantizedChunk& c) {
  if (c.scheme != Scheme::kQ8Blockwise) {
    throw Error(ErrorCode::kMalformedChunk, "not a q8 chunk");
  }
  c.Validate();
  std::vector<float> out(c.num_elements);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float scale = c.scales[i / c.block_size];
    out[i] = static_cast<float>(static_cast<std::int8_t>(c.payload[i])) * scale;
  }
  return out;
}

std::uint16_t FloatToHalf(float x) {
  if (!std::isfinite(x)) throw Error(ErrorCode::kNonFiniteInput, "f16 input not finite");
  const std::uint32_t f = std::bit_cast<std::uint32_t>(x);
  const std::uint16_t sign = static_cast<std::uint16_t>((f >> 16) & 0x8000u);
  const std::uint32_t mag = f & 0x7fffffffu;
  if (mag > kHalfMaxBits) {
    throw Error(ErrorCode::kOverflowToInfinity,
                std::to_string(x) + " exceeds the largest finite binary16 value");
  }
  if (mag < 0x38800000u) {
    // Below 2^-14: binary16 subnormal, unit 2^-24. The scaled value is exact
    // in double, so nearbyint gives round-half-to-even directly; a result of
    // 0x400 is the correct encoding of the smallest normal.
    const double scaled = static_cast<double>(std::bit_cast<float>(mag)) * 0x1.0p24;
    return sign | static_cast<std::uint16_t>(std::nearbyint(scaled));
  }
  const std::uint32_t exponent = (mag >> 23) - 127 + 15;
  const std::uint32_t mantissa = mag & 0x7fffffu;
  std::uint32_t h = (exponent << 10) | (mantissa >> 13);
  const std::uint32_t rest = mantissa & 0x1fffu;
  if (rest > 0x1000u || (rest == 0x1000u && (h & 1u))) ++h;
  return sign | static_cast<std::uint16_t>(h);
}

float HalfToFloat(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  const std::uint32_t exponent = (h >> 10) & 0x1fu;
  const std::uint32_t mantissa = h & 0x3ffu;
  if (exponent == 0) {
    const float v = static_cast<float>(mantissa) * 0x1.0p-24f;
    return sign ? -v : v;
  }
  if (exponent == 31) {
    return std::bit_cast<float>(sign | 0x7f800000u | (mantissa << 13));
  }
  return std::bit_cast<float>(sign | ((exponent - 15 + 127) << 23) | (mantissa << 13));
}

QuantizedChunk EncodeF16(std::span<const float> x) {
  CheckFinite(x);
  QuantizedChunk c;
  c.scheme = Scheme::kF16;
  c.num_elements = x.size();
  c.payload.resize(2 * x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::uint16_t h = FloatToHalf(x[i]);
    std::memcpy(&c.payload[2 * i], &h, 2);
  }
  return c;
}

QuantizedChunk EncodeF16(const TensorBuf& t) {
  t.CheckShape();
  return EncodeF16(std::span<const float>(t.data));
}

std::vector<float> DecodeF16(const QuantizedChunk& c) {
  if (c.scheme != Scheme::kF16) throw Error(ErrorCode::kMalformedChunk, "not an f16 chunk");
  c.Validate();
  std::vector<float> out(c.num_elements);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint16_t h;
    std::memcpy(&h, &c.payload[2 * i], 2);
    out[i] = HalfToFloat(h);
  }
  return out;
}

QuantizedChunk EncodeF32(std::span<const float> x) {
  CheckFinite(x);
  QuantizedChunk c;
  c.scheme = Scheme::kF32;
  c.num_elements = x.size();
  auto bytes = AsBytes(x);
  c.payload.assign(bytes.begin(), bytes.end());
  return c;
}

std::vector<float> DecodeF32(const QuantizedChunk& c) {
  if (c.scheme != Scheme::kF32) throw Error(ErrorCode::kMalformedChunk, "not an f32 chunk");
  c.Validate();
  std::vector<float> out(c.num_elements);
  std::memcpy(out.data(), c.payload.data(), c.payload.size());
  return out;
}

QuantizedChunk Encode(std::span<const float> x, const CodecPolicy& policy) {
  switch (SelectScheme(x.size(), policy)) {
    case Scheme::kQ8Blockwise: return QuantizeQ8(x, policy.block_size);
    case Scheme::kF16: return EncodeF16(x);
    case Scheme::kF32: return EncodeF32(x);
  }
  throw Error(ErrorCode::kMalformedChunk, "unreachable scheme");
}

std::vector<float> Decode(const QuantizedChunk& c) {
  switch (c.scheme) {
    case Scheme::kQ8Blockwise: return DequantizeQ8(c);
    case Scheme::kF16: return DecodeF16(c);
    case Scheme::kF32: return DecodeF32(c);
  }
  throw Error(ErrorCode::kMalformedChunk,
              "unknown scheme " + std::to_string(static_cast<int>(c.scheme)));
}

TensorBuf DecodeTensor(const QuantizedChunk& c) { return TensorBuf::Vector(Decode(c)); }

std::uint64_t EncodedSize(Scheme scheme, std::uint64_t n, std::uint32_t block_size) {
  switch (scheme) {
    case Scheme::kQ8Blockwise:
      if (block_size == 0) throw Error(ErrorCode::kInvalidConfig, "block_size < 1");
      return kChunkHeaderBytes + n + 4 * CeilDiv(n, block_size);
    case Scheme::kF16: return kChunkHeaderBytes + 2 * n;
    case Scheme::kF32: return kChunkHeaderBytes + 4 * n;
  }
  return kChunkHeaderBytes;
}

void SerializeInto(const QuantizedChunk& c, std::vector<std::uint8_t>* out) {
  c.Validate();
  ByteWriter w(out);
  w.tag({kChunkMagic, 4});
  w.u8(static_cast<std::uint8_t>(c.scheme));
  w.u8(0);
  w.u8(0);
  w.u8(0);
  w.u64(c.num_elements);
  w.u32(c.scheme == Scheme::kQ8Blockwise ? c.block_size : 0);
  w.u32(static_cast<std::uint32_t>(c.scales.size()));
  for (float s : c.scales) w.f32(s);
  w.bytes(c.payload);
}

std::vector<std::uint8_t> Serialize(const QuantizedChunk& c) {
  std::vector<std::uint8_t> out;
  out.reserve(EncodedSize(c.scheme, c.num_elements, c.block_size == 0 ? 1 : c.block_size));
  SerializeInto(c, &out);
  return out;
}

QuantizedChunk Deserialize(std::span<const std::uint8_t> bytes, std::size_t* consumed) {
  ByteReader r(bytes, ErrorCode::kMalformedChunk);
  r.expect_tag({kChunkMagic, 4});
  QuantizedChunk c;
  const std::uint8_t scheme = r.u8();
  if (scheme < 1 || scheme > 3) r.fail("unknown scheme " + std::to_string(scheme));
  c.scheme = static_cast<Scheme>(scheme);
  r.bytes(3);
  c.num_elements = r.u64();
  c.block_size = r.u32();
  const std::uint32_t scale_count = r.u32();
  std::uint64_t payload_len = 0;
  switch (c.scheme) {
    case Scheme::kQ8Blockwise:
      if (c.block_size == 0) r.fail("q8 block_size is 0");
      if (scale_count != CeilDiv(c.num_elements, c.block_size)) r.fail("q8 scale count mismatch");
      payload_len = c.num_elements;
      break;
    case Scheme::kF16: payload_len = 2 * c.num_elements; break;
    case Scheme::kF32: payload_len = 4 * c.num_elements; break;
  }
  if (payload_len > r.remaining() || 4ull * scale_count > r.remaining()) {
    r.fail("chunk truncated");
  }
  c.scales.resize(scale_count);
  for (auto& s : c.scales) s = r.f32();
  auto payload = r.bytes(payload_len);
  c.payload.assign(payload.begin(), payload.end());
  c.Validate();
  if (consumed) *consumed = r.position();
  return c;
}

}  // namespace swarm::codec
