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

#ifndef SWARM_WIRE_HPP_
#define SWARM_WIRE_HPP_

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "swarm/error.hpp"

namespace swarm {

static_assert(std::endian::native == std::endian::little,
              "wire helpers assume a little-endian host");

// Append-only little-endian encoder used by every on-disk and on-wire format.
class ByteWriter {
 public:
  ByteWriter() = default;
  explicit ByteWriter(std::vector<std::uint8_t>* out) : out_(out) {}

  void u8(std::uint8_t v) { out().push_back(v); }
  void u16(std::uint16_t v) { raw(&v, sizeof v); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f32(float v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void bytes(std::span<const std::uint8_t> b) { raw(b.data(), b.size()); }
  void tag(std::string_view magic) { raw(magic.data(), magic.size()); }

  // u16 length prefix followed by the characters.
  void str(std::string_view s);
  // u32 length prefix followed by the bytes.
  void blob(std::span<const std::uint8_t> b);

  std::vector<std::uint8_t>& out() { return out_ ? *out_ : own_; }
  std::vector<std::uint8_t> take() { return std::move(own_); }

 private:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out().insert(out().end(), b, b + n);
  }

  std::vector<std::uint8_t>* out_ = nullptr;
  std::vector<std::uint8_t> own_;
};

// Bounds-checked reader. Every overrun throws Error with the code supplied at
// construction so each format reports its own error kind.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> in, ErrorCode on_error)
      : in_(in), on_error_(on_error) {}

  std::uint8_t u8() { return pod<std::uint8_t>(); }
  std::uint16_t u16() { return pod<std::uint16_t>(); }
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  float f32() { return pod<float>(); }
  double f64() { return pod<double>(); }

  std::span<const std::uint8_t> bytes(std::size_t n);
  void expect_tag(std::string_view magic);
  std::string str();
  std::span<const std::uint8_t> blob();

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }
  bool done() const { return pos_ == in_.size(); }

  [[noreturn]] void fail(const std::string& what) const;

 private:
  template <typename T>
  T pod() {
    auto b = bytes(sizeof(T));
    T v;
    std::memcpy(&v, b.data(), sizeof(T));
    return v;
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  ErrorCode on_error_;
};

// 64-bit FNV-1a. Used for shard checksums and parameter hashes; any single
// byte change alters the digest because each step is a bijection on the state.
std::uint64_t Fnv1a64(std::span<const std::uint8_t> bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);

template <typename T>
std::span<const std::uint8_t> AsBytes(std::span<const T> values) {
  return {reinterpret_cast<const std::uint8_t*>(values.data()),
          values.size_bytes()};
}

}  // namespace swarm

#endif  // SWARM_WIRE_HPP_
