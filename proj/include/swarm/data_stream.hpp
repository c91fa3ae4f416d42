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

// Shards of tokenized text-to-image records, and a prefetching reader that
// streams them from a directory or an HTTP server.
//
// Record encoding (inside the records block):
//   varint caption_length, caption_length varint token ids,
//   1024 image codes packed at 13 bits each, least significant bit first
//   (1664 bytes).
//
// Shard file (little-endian):
//   "TSHD" | version u16 | record_count u32 | uncompressed_len u64 |
//   checksum u64 (FNV-1a 64 of the uncompressed records block) |
//   Brotli stream of the records block (quality kBrotliQuality, window 22).
//
// Shards of a source are named shard-00000.tshd, shard-00001.tshd, ... and
// the stream ends at the first missing index.

#ifndef SWARM_DATA_STREAM_HPP_
#define SWARM_DATA_STREAM_HPP_

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace swarm::data {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::size_t kCodesPerRecord = 1024;  // (256 / 8)^2
inline constexpr std::uint32_t kCodebookSize = 8192;
inline constexpr unsigned kCodeBits = 13;
inline constexpr std::size_t kPackedCodeBytes = kCodesPerRecord * kCodeBits / 8;  // 1664
inline constexpr std::uint16_t kShardVersion = 1;
inline constexpr std::size_t kShardHeaderBytes = 26;
inline constexpr int kBrotliQuality = 5;
inline constexpr int kBrotliWindow = 22;

struct Record {
  std::vector<std::uint32_t> caption_tokens;
  std::vector<std::uint16_t> image_codes;

  // Throws kCodeOutOfRange.
  void Validate() const;
  bool operator==(const Record&) const = default;
};

Bytes PackCodes(std::span<const std::uint16_t> codes);
std::vector<std::uint16_t> UnpackCodes(std::span<const std::uint8_t> packed, std::size_t count);

void PutVarint(Bytes& out, std::uint64_t v);

// Uncompressed records block; canonical (same records, same bytes).
Bytes EncodeRecordsBlock(std::span<const Record> records);
std::vector<Record> DecodeRecordsBlock(std::span<const std::uint8_t> block, std::uint32_t count);

struct ShardHeader {
  std::uint16_t version = kShardVersion;
  std::uint32_t record_count = 0;
  std::uint64_t uncompressed_len = 0;
  std::uint64_t checksum = 0;
  std::uint64_t compressed_len = 0;  // bytes after the header
};

// Throws kEmptyShard, kCodeOutOfRange.
Bytes EncodeShard(std::span<const Record> records);
// Throws kMalformedChunk for a foreign file, kChecksumMismatch for damage.
std::vector<Record> DecodeShard(std::span<const std::uint8_t> shard);
ShardHeader InspectShard(std::span<const std::uint8_t> shard);

std::string ShardName(std::uint32_t index);

// Compressed shard bytes of `records` over `reference_bytes`.
double BandwidthRatio(std::span<const Record> records, std::uint64_t reference_bytes);

class ShardSource {
 public:
  virtual ~ShardSource() = default;
  // Shard `index`, or nullopt past the last shard. Throws kFetchFailed.
  virtual std::optional<Bytes> Fetch(std::uint32_t index) = 0;
  virtual std::string Describe() const = 0;
};

// A directory of shard-NNNNN.tshd files, or a single shard file.
std::unique_ptr<ShardSource> OpenDirectorySource(const std::string& path);
// http://host[:port]/prefix; GETs prefix/shard-NNNNN.tshd. Interrupted
// transfers resume with a Range request; 404 ends the stream.
std::unique_ptr<ShardSource> OpenHttpSource(const std::string& url, std::uint32_t max_retries = 3,
                                            double retry_backoff_seconds = 0.05);
std::unique_ptr<ShardSource> OpenSource(const std::string& source, std::uint32_t max_retries = 3);

struct StreamOptions {
  // Shards held at once, counting the one being consumed.
  std::size_t prefetch_depth = 2;
  bool skip_corrupt = false;
};

struct StreamStats {
  std::uint64_t shards_read = 0;
  std::uint64_t shards_skipped = 0;
  std::uint64_t records = 0;
  std::uint64_t bytes_fetched = 0;
  std::size_t peak_buffered = 0;
  double fetch_seconds = 0.0;
  double consumer_wait_seconds = 0.0;
};

// Yields records in shard order from a background fetcher.
class RecordStream {
 public:
  RecordStream(std::unique_ptr<ShardSource> source, StreamOptions options);
  ~RecordStream();
  RecordStream(const RecordStream&) = delete;
  RecordStream& operator=(const RecordStream&) = delete;

  // Next record, or nullopt at the end. Rethrows fetch errors; damaged
  // shards throw kChecksumMismatch unless skip_corrupt is set.
  std::optional<Record> Next();
  StreamStats stats() const;

 private:
  struct Slot {
    std::uint32_t index = 0;
    Bytes bytes;
    std::exception_ptr error;
    bool end = false;
  };

  void FetchLoop();

  std::unique_ptr<ShardSource> source_;
  StreamOptions options_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Slot> queue_;
  bool holding_ = false;
  bool stop_ = false;
  bool finished_ = false;
  std::vector<Record> current_;
  std::size_t pos_ = 0;
  StreamStats stats_;
  std::thread fetcher_;
};

}  // namespace swarm::data

#endif  // SWARM_DATA_STREAM_HPP_
