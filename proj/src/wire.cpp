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

#include "swarm/wire.hpp"

#include <limits>

namespace swarm {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonFiniteInput: return "NonFiniteInput";
    case ErrorCode::kMalformedChunk: return "MalformedChunk";
    case ErrorCode::kOverflowToInfinity: return "OverflowToInfinity";
    case ErrorCode::kStepOutOfRange: return "StepOutOfRange";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::kEmptyRound: return "EmptyRound";
    case ErrorCode::kInvalidPolicy: return "InvalidPolicy";
    case ErrorCode::kRoundAborted: return "RoundAborted";
    case ErrorCode::kUnknownPeer: return "UnknownPeer";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kCodeOutOfRange: return "CodeOutOfRange";
    case ErrorCode::kEmptyShard: return "EmptyShard";
    case ErrorCode::kChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::kFetchFailed: return "FetchFailed";
    case ErrorCode::kMalformedMessage: return "MalformedMessage";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

void ByteWriter::str(std::string_view s) {
  if (s.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw Error(ErrorCode::kMalformedMessage, "string too long for u16 prefix");
  }
  u16(static_cast<std::uint16_t>(s.size()));
  raw(s.data(), s.size());
}

void ByteWriter::blob(std::span<const std::uint8_t> b) {
  if (b.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorCode::kMalformedMessage, "blob too long for u32 prefix");
  }
  u32(static_cast<std::uint32_t>(b.size()));
  bytes(b);
}

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n) {
  if (n > remaining()) {
    fail("need " + std::to_string(n) + " bytes at offset " +
         std::to_string(pos_) + ", have " + std::to_string(remaining()));
  }
  auto out = in_.subspan(pos_, n);
  pos_ += n;
  return out;
}

void ByteReader::expect_tag(std::string_view magic) {
  auto b = bytes(magic.size());
  if (std::memcmp(b.data(), magic.data(), magic.size()) != 0) {
    fail("bad magic, expected '" + std::string(magic) + "'");
  }
}

std::string ByteReader::str() {
  auto n = u16();
  auto b = bytes(n);
  return {reinterpret_cast<const char*>(b.data()), b.size()};
}

std::span<const std::uint8_t> ByteReader::blob() { return bytes(u32()); }

void ByteReader::fail(const std::string& what) const {
  throw Error(on_error_, what);
}

std::uint64_t Fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace swarm
