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

#include "swarm/data_stream.hpp"

#include <brotli/decode.h>
#include <brotli/encode.h>

#include <chrono>
#include <cstring>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <httplib.h>

#include "swarm/error.hpp"
#include "swarm/wire.hpp"

namespace swarm::data {
namespace {

constexpr std::string_view kMagic = "TSHD";
constexpr std::uint64_t kMaxBlockBytes = 1ULL << 32;

std::uint64_t GetVarint(std::span<const std::uint8_t> in, std::size_t& pos) {
  std::uint64_t v = 0;
  for (unsigned shift = 0; shift < 64; shift += 7) {
    if (pos >= in.size()) throw Error(ErrorCode::kMalformedChunk, "truncated varint");
    const std::uint8_t b = in[pos++];
    v |= static_cast<std::uint64_t>(b & 0x7f) << shift;
    if (!(b & 0x80)) return v;
  }
  throw Error(ErrorCode::kMalformedChunk, "varint longer than 64 bits");
}

Bytes Compress(std::span<const std::uint8_t> in) {
  std::size_t size = BrotliEncoderMaxCompressedSize(in.size());
  if (size == 0) throw Error(ErrorCode::kInvalidConfig, "records block too large");
  Bytes out(size);
  if (!BrotliEncoderCompress(kBrotliQuality, kBrotliWindow, BROTLI_MODE_GENERIC, in.size(),
                             in.data(), &size, out.data())) {
    throw Error(ErrorCode::kInvalidConfig, "brotli compression failed");
  }
  out.resize(size);
  return out;
}

Bytes Decompress(std::span<const std::uint8_t> in, std::uint64_t expected) {
  Bytes out(expected);
  BrotliDecoderState* st = BrotliDecoderCreateInstance(nullptr, nullptr, nullptr);
  if (st == nullptr) throw Error(ErrorCode::kInvalidConfig, "brotli decoder allocation failed");
  std::size_t avail_in = in.size();
  const std::uint8_t* next_in = in.data();
  std::size_t avail_out = out.size();
  std::uint8_t* next_out = out.data();
  const BrotliDecoderResult res =
      BrotliDecoderDecompressStream(st, &avail_in, &next_in, &avail_out, &next_out, nullptr);
  BrotliDecoderDestroyInstance(st);
  if (res != BROTLI_DECODER_RESULT_SUCCESS || avail_in != 0 || avail_out != 0) {
    throw Error(ErrorCode::kChecksumMismatch, "compressed block is damaged");
  }
  return out;
}

Bytes ReadFile(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::kFetchFailed, "cannot open " + p.string());
  Bytes b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::kFetchFailed, "read error on " + p.string());
  return b;
}

class DirectorySource : public ShardSource {
 public:
  explicit DirectorySource(std::filesystem::path path) : path_(std::move(path)) {}

  std::optional<Bytes> Fetch(std::uint32_t index) override {
    if (std::filesystem::is_regular_file(path_)) {
      if (index > 0) return std::nullopt;
      return ReadFile(path_);
    }
    const auto file = path_ / ShardName(index);
    if (!std::filesystem::exists(file)) return std::nullopt;
    return ReadFile(file);
  }

  std::string Describe() const override { return path_.string(); }

 private:
  std::filesystem::path path_;
};

class HttpSource : public ShardSource {
 public:
  HttpSource(std::string url, std::uint32_t max_retries, double backoff)
      : url_(std::move(url)), max_retries_(max_retries), backoff_(backoff) {
    const std::string scheme = "http://";
    if (url_.rfind(scheme, 0) != 0) {
      throw Error(ErrorCode::kInvalidConfig, "only http:// sources are supported: " + url_);
    }
    const std::string rest = url_.substr(scheme.size());
    const auto slash = rest.find('/');
    host_ = rest.substr(0, slash);
    prefix_ = slash == std::string::npos ? "" : rest.substr(slash);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    if (host_.empty()) throw Error(ErrorCode::kInvalidConfig, "source URL has no host: " + url_);
  }

  std::optional<Bytes> Fetch(std::uint32_t index) override {
    httplib::Client cli(scheme_host());
    cli.set_connection_timeout(5);
    cli.set_read_timeout(30);
    const std::string path = prefix_ + "/" + ShardName(index);
    Bytes buf;
    std::string last_error;
    for (std::uint32_t attempt = 0; attempt <= max_retries_; ++attempt) {
      if (attempt > 0 && backoff_ > 0.0) {
        std::this_thread::sleep_for(std::chrono::duration<double>(backoff_ * attempt));
      }
      httplib::Headers headers;
      if (!buf.empty()) headers.emplace("Range", "bytes=" + std::to_string(buf.size()) + "-");
      int status = 0;
      bool not_found = false;
      auto res = cli.Get(
          path, headers,
          [&](const httplib::Response& r) {
            status = r.status;
            if (r.status == 404) {
              not_found = true;
              return false;
            }
            if (r.status == 200) buf.clear();  // the server ignored the range
            return r.status == 200 || r.status == 206;
          },
          [&](const char* data, std::size_t len) {
            buf.insert(buf.end(), data, data + len);
            return true;
          });
      if (not_found) return std::nullopt;
      if (res && (res->status == 200 || res->status == 206)) return buf;
      last_error = res ? "HTTP " + std::to_string(status) : httplib::to_string(res.error());
    }
    throw Error(ErrorCode::kFetchFailed, "GET " + url_ + "/" + ShardName(index) + " failed after " +
                                             std::to_string(max_retries_ + 1) +
                                             " attempts: " + last_error);
  }

  std::string Describe() const override { return url_; }

 private:
  std::string scheme_host() const { return "http://" + host_; }

  std::string url_;
  std::string host_;
  std::string prefix_;
  std::uint32_t max_retries_;
  double backoff_;
};

}  // namespace

void Record::Validate() const {
  if (image_codes.size() != kCodesPerRecord) {
    throw Error(ErrorCode::kCodeOutOfRange, "record must hold exactly 1024 image codes, has " +
                                                std::to_string(image_codes.size()));
  }
  for (std::uint16_t c : image_codes) {
    if (c >= kCodebookSize) {
      throw Error(ErrorCode::kCodeOutOfRange, "image code " + std::to_string(c) + " >= 8192");
    }
  }
}

Bytes PackCodes(std::span<const std::uint16_t> codes) {
  Bytes out((codes.size() * kCodeBits + 7) / 8, 0);
  std::size_t bit = 0;
  for (std::uint16_t c : codes) {
    if (c >= kCodebookSize) {
      throw Error(ErrorCode::kCodeOutOfRange, "image code " + std::to_string(c) + " >= 8192");
    }
    for (unsigned k = 0; k < kCodeBits; ++k, ++bit) {
      if ((c >> k) & 1u) out[bit >> 3] |= static_cast<std::uint8_t>(1u << (bit & 7));
    }
  }
  return out;
}

std::vector<std::uint16_t> UnpackCodes(std::span<const std::uint8_t> packed, std::size_t count) {
  if (packed.size() * 8 < count * kCodeBits) {
    throw Error(ErrorCode::kMalformedChunk, "packed code block too short");
  }
  std::vector<std::uint16_t> out(count);
  std::size_t bit = 0;
  for (auto& c : out) {
    std::uint16_t v = 0;
    for (unsigned k = 0; k < kCodeBits; ++k, ++bit) {
      v |= static_cast<std::uint16_t>(((packed[bit >> 3] >> (bit & 7)) & 1u) << k);
    }
    c = v;
  }
  return out;
}

void PutVarint(Bytes& out, std::uint64_t v) {
  while (v >= 0x80) {
    out.push_back(static_cast<std::uint8_t>(v | 0x80));
    v >>= 7;
  }
  out.push_back(static_cast<std::uint8_t>(v));
}

Bytes EncodeRecordsBlock(std::span<const Record> records) {
  Bytes out;
  for (const auto& r : records) {
    r.Validate();
    PutVarint(out, r.caption_tokens.size());
    for (std::uint32_t t : r.caption_tokens) PutVarint(out, t);
    const Bytes packed = PackCodes(r.image_codes);
    out.insert(out.end(), packed.begin(), packed.end());
  }
  return out;
}

std::vector<Record> DecodeRecordsBlock(std::span<const std::uint8_t> block, std::uint32_t count) {
  std::vector<Record> out;
  out.reserve(count);
  std::size_t pos = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    Record r;
    const std::uint64_t len = GetVarint(block, pos);
    if (len > block.size() - pos) throw Error(ErrorCode::kMalformedChunk, "caption overruns block");
    r.caption_tokens.resize(len);
    for (auto& t : r.caption_tokens) {
      const std::uint64_t v = GetVarint(block, pos);
      if (v > UINT32_MAX) throw Error(ErrorCode::kMalformedChunk, "token id exceeds 32 bits");
      t = static_cast<std::uint32_t>(v);
    }
    if (block.size() - pos < kPackedCodeBytes) {
      throw Error(ErrorCode::kMalformedChunk, "code block overruns records block");
    }
    r.image_codes = UnpackCodes(block.subspan(pos, kPackedCodeBytes), kCodesPerRecord);
    pos += kPackedCodeBytes;
    out.push_back(std::move(r));
  }
  if (pos != block.size()) throw Error(ErrorCode::kMalformedChunk, "trailing bytes in records block");
  return out;
}

Bytes EncodeShard(std::span<const Record> records) {
  if (records.empty()) throw Error(ErrorCode::kEmptyShard, "a shard needs at least one record");
  if (records.size() > UINT32_MAX) throw Error(ErrorCode::kInvalidConfig, "too many records");
  const Bytes block = EncodeRecordsBlock(records);
  const Bytes packed = Compress(block);
  ByteWriter w;
  w.tag(kMagic);
  w.u16(kShardVersion);
  w.u32(static_cast<std::uint32_t>(records.size()));
  w.u64(block.size());
  w.u64(Fnv1a64(block));
  w.bytes(packed);
  return w.take();
}

ShardHeader InspectShard(std::span<const std::uint8_t> shard) {
  if (shard.size() < 4 || std::memcmp(shard.data(), kMagic.data(), 4) != 0) {
    throw Error(ErrorCode::kMalformedChunk, "not a shard (bad magic)");
  }
  if (shard.size() < kShardHeaderBytes) {
    throw Error(ErrorCode::kChecksumMismatch, "shard header truncated");
  }
  ByteReader r(shard, ErrorCode::kChecksumMismatch);
  r.expect_tag(kMagic);
  ShardHeader h;
  h.version = r.u16();
  if (h.version != kShardVersion) {
    throw Error(ErrorCode::kMalformedChunk, "unsupported shard version " + std::to_string(h.version));
  }
  h.record_count = r.u32();
  h.uncompressed_len = r.u64();
  h.checksum = r.u64();
  h.compressed_len = shard.size() - kShardHeaderBytes;
  return h;
}

std::vector<Record> DecodeShard(std::span<const std::uint8_t> shard) {
  const ShardHeader h = InspectShard(shard);
  constexpr std::uint64_t kMinRecord = 1 + kPackedCodeBytes;
  if (h.record_count == 0 || h.uncompressed_len > kMaxBlockBytes ||
      h.uncompressed_len / kMinRecord < h.record_count) {
    throw Error(ErrorCode::kChecksumMismatch, "shard header is inconsistent");
  }
  const Bytes block = Decompress(shard.subspan(kShardHeaderBytes), h.uncompressed_len);
  if (Fnv1a64(block) != h.checksum) {
    throw Error(ErrorCode::kChecksumMismatch, "records block checksum mismatch");
  }
  try {
    return DecodeRecordsBlock(block, h.record_count);
  } catch (const Error& e) {
    throw Error(ErrorCode::kChecksumMismatch, std::string("records block: ") + e.what());
  }
}

std::string ShardName(std::uint32_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "shard-%05u.tshd", index);
  return buf;
}

double BandwidthRatio(std::span<const Record> records, std::uint64_t reference_bytes) {
  if (reference_bytes == 0) throw Error(ErrorCode::kInvalidConfig, "reference bytes must be > 0");
  return static_cast<double>(EncodeShard(records).size()) / static_cast<double>(reference_bytes);
}

std::unique_ptr<ShardSource> OpenDirectorySource(const std::string& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::kFetchFailed, "source does not exist: " + path);
  }
  return std::make_unique<DirectorySource>(path);
}

std::unique_ptr<ShardSource> OpenHttpSource(const std::string& url, std::uint32_t max_retries,
                                            double retry_backoff_seconds) {
  return std::make_unique<HttpSource>(url, max_retries, retry_backoff_seconds);
}

std::unique_ptr<ShardSource> OpenSource(const std::string& source, std::uint32_t max_retries) {
  if (source.rfind("http://", 0) == 0) return OpenHttpSource(source, max_retries);
  return OpenDirectorySource(source);
}

RecordStream::RecordStream(std::unique_ptr<ShardSource> source, StreamOptions options)
    : source_(std::move(source)), options_(options) {
  if (options_.prefetch_depth == 0) {
    throw Error(ErrorCode::kInvalidConfig, "prefetch_depth must be >= 1");
  }
  fetcher_ = std::thread([this] { FetchLoop(); });
}

RecordStream::~RecordStream() {
  {
    std::lock_guard<std::mutex> l(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  fetcher_.join();
}

void RecordStream::FetchLoop() {
  for (std::uint32_t index = 0;; ++index) {
    {
      std::unique_lock<std::mutex> l(mu_);
      cv_.wait(l, [&] {
        return stop_ || queue_.size() + (holding_ ? 1 : 0) < options_.prefetch_depth;
      });
      if (stop_) return;
    }
    Slot slot;
    slot.index = index;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      auto bytes = source_->Fetch(index);
      if (bytes) {
        slot.bytes = std::move(*bytes);
      } else {
        slot.end = true;
      }
    } catch (...) {
      slot.error = std::current_exception();
    }
    const bool last = slot.end || slot.error;
    {
      std::lock_guard<std::mutex> l(mu_);
      stats_.fetch_seconds +=
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      stats_.bytes_fetched += slot.bytes.size();
      queue_.push_back(std::move(slot));
      if (!last) {
        stats_.peak_buffered = std::max(stats_.peak_buffered, queue_.size() + (holding_ ? 1 : 0));
      }
    }
    cv_.notify_all();
    if (last) return;
  }
}

std::optional<Record> RecordStream::Next() {
  for (;;) {
    if (pos_ < current_.size()) {
      std::lock_guard<std::mutex> l(mu_);
      ++stats_.records;
      return std::move(current_[pos_++]);
    }
    current_.clear();
    pos_ = 0;
    if (finished_) return std::nullopt;
    Slot slot;
    {
      std::unique_lock<std::mutex> l(mu_);
      holding_ = false;
      cv_.notify_all();
      const auto t0 = std::chrono::steady_clock::now();
      cv_.wait(l, [&] { return !queue_.empty(); });
      stats_.consumer_wait_seconds +=
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      slot = std::move(queue_.front());
      queue_.pop_front();
      holding_ = !slot.end && !slot.error;
    }
    cv_.notify_all();
    if (slot.end) {
      finished_ = true;
      return std::nullopt;
    }
    if (slot.error) {
      finished_ = true;
      std::rethrow_exception(slot.error);
    }
    try {
      current_ = DecodeShard(slot.bytes);
      std::lock_guard<std::mutex> l(mu_);
      ++stats_.shards_read;
    } catch (const Error& e) {
      const bool damaged =
          e.code() == ErrorCode::kChecksumMismatch || e.code() == ErrorCode::kMalformedChunk;
      if (damaged && options_.skip_corrupt) {
        std::lock_guard<std::mutex> l(mu_);
        ++stats_.shards_skipped;
        continue;
      }
      finished_ = true;
      throw Error(e.code(), ShardName(slot.index) + ": " + e.what());
    }
  }
}

StreamStats RecordStream::stats() const {
  std::lock_guard<std::mutex> l(mu_);
  return stats_;
}

}  // namespace swarm::data
