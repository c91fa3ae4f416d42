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

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "swarm/error.hpp"
#include "swarm/random.hpp"

namespace swarm::codec {
namespace {

template <typename F>
ErrorCode CodeOf(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no swarm::Error thrown";
  return ErrorCode::kIoError;
}

std::vector<float> Normals(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<float> x(n);
  for (auto& v : x) v = static_cast<float>(rng.normal());
  return x;
}

TEST(SelectScheme, ThresholdIsInclusive) {
  CodecPolicy p;
  EXPECT_EQ(SelectScheme(65536, p), Scheme::kQ8Blockwise);
  EXPECT_EQ(SelectScheme(65535, p), Scheme::kF16);
  EXPECT_EQ(SelectScheme(0, p), Scheme::kF16);
  p.lossless = true;
  EXPECT_EQ(SelectScheme(1u << 20, p), Scheme::kF32);
}

TEST(SelectScheme, MonotoneInN) {
  CodecPolicy p;
  p.q8_threshold = 100;
  bool seen_q8 = false;
  for (std::uint64_t n = 0; n < 300; ++n) {
    const bool q8 = SelectScheme(n, p) == Scheme::kQ8Blockwise;
    if (seen_q8) EXPECT_TRUE(q8) << n;
    seen_q8 |= q8;
  }
}

TEST(QuantizeQ8, SmallBlockMatchesHandValues) {
  const std::vector<float> x{1.0f, -2.0f, 0.5f};
  const auto c = QuantizeQ8(x, 4096);
  ASSERT_EQ(c.scales.size(), 1u);
  EXPECT_NEAR(c.scales[0], 2.0 / 127.0, 2.0 / 127.0 * 0x1.0p-16);
  ASSERT_EQ(c.payload.size(), 3u);
  EXPECT_EQ(static_cast<std::int8_t>(c.payload[0]), 64);
  EXPECT_EQ(static_cast<std::int8_t>(c.payload[1]), -127);
  EXPECT_EQ(static_cast<std::int8_t>(c.payload[2]), 32);
}

TEST(DequantizeQ8, DirectArithmetic) {
  QuantizedChunk c;
  c.scheme = Scheme::kQ8Blockwise;
  c.num_elements = 1;
  c.block_size = 4096;
  c.scales = {2.0f / 127.0f};
  c.payload = {64};
  const auto y = DequantizeQ8(c);
  ASSERT_EQ(y.size(), 1u);
  EXPECT_NEAR(y[0], 1.0078740157480315, 1e-6);
}

TEST(QuantizeQ8, ZeroBlockRoundTripsExactly) {
  const std::vector<float> x(5000, 0.0f);
  const auto c = QuantizeQ8(x, 4096);
  ASSERT_EQ(c.scales.size(), 2u);
  EXPECT_EQ(c.scales[0], 0.0f);
  EXPECT_EQ(c.scales[1], 0.0f);
  for (auto b : c.payload) EXPECT_EQ(b, 0);
  EXPECT_EQ(DequantizeQ8(c), x);
}

TEST(QuantizeQ8, ElementwiseBoundOnGaussianSamples) {
  const auto x = Normals(100000, 11);
  const auto c = QuantizeQ8(x, 4096);
  c.Validate();
  ASSERT_EQ(c.scales.size(), 25u);
  const auto y = DequantizeQ8(c);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = c.scales[i / 4096];
    ASSERT_LE(std::abs(static_cast<double>(x[i]) - y[i]), s / 2) << i;
  }
}

TEST(QuantizeQ8, ScaleIsAbsmaxOver127) {
  const auto x = Normals(10000, 3);
  const auto c = QuantizeQ8(x, 1000);
  for (std::size_t b = 0; b < c.scales.size(); ++b) {
    float absmax = 0;
    for (std::size_t i = b * 1000; i < std::min<std::size_t>(x.size(), (b + 1) * 1000); ++i) {
      absmax = std::max(absmax, std::abs(x[i]));
    }
    const double exact = absmax / 127.0;
    EXPECT_LE(c.scales[b], exact * (1 + 1e-7));
    EXPECT_GE(c.scales[b], exact * (1 - 0x1.0p-16));
  }
}

TEST(QuantizeQ8, SignPreserved) {
  const auto x = Normals(20000, 5);
  const auto y = DequantizeQ8(QuantizeQ8(x, 512));
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_TRUE(y[i] == 0.0f || std::signbit(y[i]) == std::signbit(x[i])) << i;
  }
}

TEST(QuantizeQ8, RoundsHalfToEven) {
  // absmax 127 gives scale 1, so codes equal round(x).
  const std::vector<float> x{127.0f, 0.5f, 1.5f, 2.5f, -0.5f, -1.5f};
  const auto c = QuantizeQ8(x, 4096);
  ASSERT_EQ(c.scales[0], 1.0f);
  const std::int8_t want[] = {127, 0, 2, 2, 0, -2};
  for (int i = 0; i < 6; ++i) EXPECT_EQ(static_cast<std::int8_t>(c.payload[i]), want[i]) << i;
}

TEST(QuantizeQ8, RejectsNonFinite) {
  std::vector<float> x{1.0f, std::numeric_limits<float>::quiet_NaN()};
  EXPECT_EQ(CodeOf([&] { QuantizeQ8(x, 4); }), ErrorCode::kNonFiniteInput);
  x[1] = std::numeric_limits<float>::infinity();
  EXPECT_EQ(CodeOf([&] { QuantizeQ8(x, 4); }), ErrorCode::kNonFiniteInput);
}

TEST(DequantizeQ8, MalformedChunks) {
  auto c = QuantizeQ8(std::vector<float>(10, 1.0f), 4);
  auto bad = c;
  bad.scales.pop_back();
  EXPECT_EQ(CodeOf([&] { DequantizeQ8(bad); }), ErrorCode::kMalformedChunk);
  bad = c;
  bad.payload.pop_back();
  EXPECT_EQ(CodeOf([&] { DequantizeQ8(bad); }), ErrorCode::kMalformedChunk);
  bad = c;
  bad.scales[0] = -1.0f;
  EXPECT_EQ(CodeOf([&] { DequantizeQ8(bad); }), ErrorCode::kMalformedChunk);
}

TEST(F16, KnownValues) {
  const std::vector<float> x{1.0f, 1.0f / 3.0f, 65504.0f, -2.0f, 0.0f};
  const auto c = EncodeF16(x);
  EXPECT_EQ(c.payload.size(), 10u);
  const auto y = DecodeF16(c);
  EXPECT_EQ(y[0], 1.0f);
  EXPECT_EQ(y[1], 0.333251953125f);
  EXPECT_EQ(y[2], 65504.0f);
  EXPECT_EQ(y[3], -2.0f);
  EXPECT_EQ(y[4], 0.0f);
}

TEST(F16, OverflowRejected) {
  const std::vector<float> x{65505.0f};
  EXPECT_EQ(CodeOf([&] { EncodeF16(x); }), ErrorCode::kOverflowToInfinity);
  const std::vector<float> y{-70000.0f};
  EXPECT_EQ(CodeOf([&] { EncodeF16(y); }), ErrorCode::kOverflowToInfinity);
}

// Reference binary16 conversion through exact double arithmetic.
std::uint16_t RefHalf(float f) {
  const double x = f;
  const std::uint16_t sign = std::signbit(x) ? 0x8000 : 0;
  double a = std::abs(x);
  if (a == 0) return sign;
  int e;
  std::frexp(a, &e);  // a in [2^(e-1), 2^e)
  int exp = e - 1;
  if (exp < -14) {
    const double q = std::nearbyint(a * 0x1.0p24);
    return sign | static_cast<std::uint16_t>(q);  // may carry into the normal range
  }
  double mant = std::nearbyint(a / std::ldexp(1.0, exp) * 1024.0);  // in [1024, 2048]
  if (mant == 2048) {
    mant = 1024;
    ++exp;
  }
  return sign | static_cast<std::uint16_t>(((exp + 15) << 10) | (static_cast<int>(mant) - 1024));
}

TEST(F16, MatchesReferenceConversion) {
  SplitMix64 rng(17);
  for (int i = 0; i < 200000; ++i) {
    const double mag = std::ldexp(rng.uniform(), static_cast<int>(rng.below(40)) - 26);
    const float f = static_cast<float>(rng.uniform() < 0.5 ? -mag : mag);
    if (std::abs(f) > 65504.0f) continue;
    ASSERT_EQ(FloatToHalf(f), RefHalf(f)) << f;
    // Decoding is exact: re-encoding the decoded value is the identity.
    ASSERT_EQ(FloatToHalf(HalfToFloat(FloatToHalf(f))), FloatToHalf(f));
  }
}

TEST(EncodedSize, Formula) {
  EXPECT_EQ(EncodedSize(Scheme::kQ8Blockwise, 4096, 4096), 4096u + 4u + kChunkHeaderBytes);
  EXPECT_EQ(EncodedSize(Scheme::kF16, 0, 4096), kChunkHeaderBytes);
  EXPECT_EQ(EncodedSize(Scheme::kQ8Blockwise, 1u << 20, 4096), 1049600u + kChunkHeaderBytes);
  EXPECT_EQ(EncodedSize(Scheme::kF32, 10, 4096), 40u + kChunkHeaderBytes);
  const double ratio =
      static_cast<double>(EncodedSize(Scheme::kQ8Blockwise, 1u << 20, 4096)) / (4.0 * (1u << 20));
  EXPECT_NEAR(ratio, 0.2502, 1e-4);
}

TEST(EncodedSize, MatchesSerializedLength) {
  for (std::size_t n : {0u, 1u, 4095u, 4096u, 4097u, 70000u}) {
    const auto x = Normals(n, n);
    const auto q = QuantizeQ8(x, 4096);
    EXPECT_EQ(Serialize(q).size(), EncodedSize(Scheme::kQ8Blockwise, n, 4096)) << n;
    const auto h = EncodeF16(x);
    EXPECT_EQ(Serialize(h).size(), EncodedSize(Scheme::kF16, n, 4096)) << n;
  }
}

TEST(Wire, LayoutAndRoundTrip) {
  const auto x = Normals(5000, 9);
  const auto c = QuantizeQ8(x, 4096);
  const auto bytes = Serialize(c);
  ASSERT_GE(bytes.size(), 24u);
  EXPECT_EQ(std::memcmp(bytes.data(), "TQC1", 4), 0);
  EXPECT_EQ(bytes[4], 1);  // scheme
  std::uint64_t n;
  std::memcpy(&n, bytes.data() + 8, 8);
  EXPECT_EQ(n, 5000u);
  std::uint32_t block, count;
  std::memcpy(&block, bytes.data() + 16, 4);
  std::memcpy(&count, bytes.data() + 20, 4);
  EXPECT_EQ(block, 4096u);
  EXPECT_EQ(count, 2u);
  std::size_t consumed = 0;
  const auto d = Deserialize(bytes, &consumed);
  EXPECT_EQ(consumed, bytes.size());
  EXPECT_EQ(Serialize(d), bytes);
  EXPECT_EQ(DequantizeQ8(d), DequantizeQ8(c));
}

TEST(Wire, TruncationAndBadMagic) {
  const auto bytes = Serialize(EncodeF16(Normals(100, 1)));
  for (std::size_t cut : {0u, 3u, 23u, 100u}) {
    std::vector<std::uint8_t> t(bytes.begin(), bytes.begin() + cut);
    EXPECT_EQ(CodeOf([&] { Deserialize(t); }), ErrorCode::kMalformedChunk) << cut;
  }
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(CodeOf([&] { Deserialize(bad); }), ErrorCode::kMalformedChunk);
}

TEST(Encode, DeterministicBytes) {
  const auto x = Normals(70000, 21);
  CodecPolicy p;
  EXPECT_EQ(Serialize(Encode(x, p)), Serialize(Encode(x, p)));
  EXPECT_EQ(Encode(x, p).scheme, Scheme::kQ8Blockwise);
  p.lossless = true;
  EXPECT_EQ(Decode(Encode(x, p)), x);
}

TEST(TensorBuf, ShapeCheck) {
  TensorBuf t{{1, 2, 3, 4, 5, 6}, {2, 3}};
  t.CheckShape();
  t.shape = {4, 2};
  EXPECT_EQ(CodeOf([&] { t.CheckShape(); }), ErrorCode::kShapeMismatch);
}

}  // namespace
}  // namespace swarm::codec
