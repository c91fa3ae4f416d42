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

#include <gtest/gtest.h>

#include <atomic>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include <unistd.h>

#include <httplib.h>

#include "swarm/wire.hpp"
#include "test_support.hpp"

namespace swarm::data {
namespace {

namespace fs = std::filesystem;
using swarm::testing::ErrorOf;

std::vector<Record> RandomRecords(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<Record> out(n);
  for (auto& r : out) {
    r.caption_tokens.resize(rng.below(40));
    for (auto& t : r.caption_tokens) t = static_cast<std::uint32_t>(rng.next() >> rng.below(64));
    r.image_codes.resize(kCodesPerRecord);
    for (auto& c : r.image_codes) c = static_cast<std::uint16_t>(rng.below(kCodebookSize));
  }
  return out;
}

// Plain bit-by-bit packer used as the reference for the 13-bit layout.
Bytes RefPack(const std::vector<std::uint16_t>& codes) {
  Bytes out((codes.size() * 13 + 7) / 8, 0);
  std::size_t bit = 0;
  for (auto c : codes) {
    for (int b = 0; b < 13; ++b, ++bit) {
      if ((c >> b) & 1) out[bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
    }
  }
  return out;
}

struct TempDir {
  TempDir() {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() /
           ("swarm_ds_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path path;
};

void WriteBytes(const fs::path& p, const Bytes& b) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::vector<Record> Drain(RecordStream& s) {
  std::vector<Record> out;
  while (auto r = s.Next()) out.push_back(std::move(*r));
  return out;
}

TEST(Packing, ThirteenBitsLsbFirst) {
  std::vector<std::uint16_t> codes(kCodesPerRecord);
  SplitMix64 rng(1);
  for (auto& c : codes) c = static_cast<std::uint16_t>(rng.below(kCodebookSize));
  const auto packed = PackCodes(codes);
  EXPECT_EQ(packed.size(), 1664u);
  EXPECT_EQ(packed, RefPack(codes));
  EXPECT_EQ(UnpackCodes(packed, codes.size()), codes);
  const std::vector<std::uint16_t> edge(kCodesPerRecord, 8191);
  EXPECT_EQ(UnpackCodes(PackCodes(edge), edge.size()), edge);
}

TEST(Record, Validation) {
  Record r;
  r.image_codes.assign(kCodesPerRecord, 0);
  r.Validate();
  r.image_codes[5] = 8192;
  EXPECT_EQ(ErrorOf([&] { r.Validate(); }), ErrorCode::kCodeOutOfRange);
  r.image_codes.assign(1023, 0);
  EXPECT_EQ(ErrorOf([&] { r.Validate(); }), ErrorCode::kCodeOutOfRange);
}

TEST(Shard, SingleZeroRecordRoundTrip) {
  Record r;
  r.image_codes.assign(kCodesPerRecord, 0);
  const std::vector<Record> in{r};
  const auto shard = EncodeShard(in);
  EXPECT_EQ(DecodeShard(shard), in);
  const auto h = InspectShard(shard);
  EXPECT_EQ(h.record_count, 1u);
  EXPECT_EQ(h.uncompressed_len, 1u + 1664u);  // varint 0 + packed codes
  EXPECT_EQ(h.compressed_len, shard.size() - kShardHeaderBytes);
}

TEST(Shard, HeaderLayout) {
  const auto recs = RandomRecords(3, 2);
  const auto shard = EncodeShard(recs);
  EXPECT_EQ(std::memcmp(shard.data(), "TSHD", 4), 0);
  std::uint16_t version;
  std::uint32_t count;
  std::uint64_t len, sum;
  std::memcpy(&version, shard.data() + 4, 2);
  std::memcpy(&count, shard.data() + 6, 4);
  std::memcpy(&len, shard.data() + 10, 8);
  std::memcpy(&sum, shard.data() + 18, 8);
  EXPECT_EQ(version, 1);
  EXPECT_EQ(count, 3u);
  const auto block = EncodeRecordsBlock(recs);
  EXPECT_EQ(len, block.size());
  EXPECT_EQ(sum, Fnv1a64(block));
}

TEST(Shard, RandomRecordsRoundTrip) {
  const auto recs = RandomRecords(500, 3);
  const auto a = EncodeShard(recs);
  EXPECT_EQ(DecodeShard(a), recs);
  EXPECT_EQ(EncodeShard(recs), a);  // canonical
}

TEST(Shard, Errors) {
  EXPECT_EQ(ErrorOf([] { EncodeShard(std::vector<Record>{}); }), ErrorCode::kEmptyShard);
  auto recs = RandomRecords(2, 4);
  recs[1].image_codes[100] = 8192;
  EXPECT_EQ(ErrorOf([&] { EncodeShard(recs); }), ErrorCode::kCodeOutOfRange);
}

TEST(Shard, TruncationDetected) {
  const auto shard = EncodeShard(RandomRecords(20, 5));
  for (std::size_t cut : {shard.size() - 1, shard.size() / 2, kShardHeaderBytes + 1,
                          kShardHeaderBytes, std::size_t{10}}) {
    Bytes t(shard.begin(), shard.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_EQ(ErrorOf([&] { DecodeShard(t); }), ErrorCode::kChecksumMismatch) << cut;
  }
  auto bad = shard;
  bad[0] = 'X';
  EXPECT_EQ(ErrorOf([&] { DecodeShard(bad); }), ErrorCode::kMalformedChunk);
}

TEST(Shard, EveryByteFlipDetected) {
  const auto shard = EncodeShard(RandomRecords(4, 6));
  for (std::size_t i = 4; i < shard.size(); ++i) {
    for (std::uint8_t mask : {0x01, 0x80, 0xff}) {
      auto bad = shard;
      bad[i] ^= mask;
      ASSERT_TRUE(ErrorOf([&] { DecodeShard(bad); }).has_value()) << i;
    }
  }
}

TEST(Shard, ChecksumCatchesEveryFlipInRecordsBlock) {
  const auto block = EncodeRecordsBlock(RandomRecords(3, 7));
  const auto sum = Fnv1a64(block);
  for (std::size_t i = 0; i < block.size(); ++i) {
    auto bad = block;
    bad[i] ^= static_cast<std::uint8_t>(1 + (i % 255));
    ASSERT_NE(Fnv1a64(bad), sum) << i;
  }
}

TEST(BandwidthRatio, Bounds) {
  const auto one = RandomRecords(1, 8);
  Record plain;
  plain.image_codes = one[0].image_codes;
  EXPECT_LE(BandwidthRatio(std::vector<Record>{plain}, 196608), 0.01);
  Record flat;
  flat.image_codes.assign(kCodesPerRecord, 42);
  EXPECT_LT(BandwidthRatio(std::vector<Record>(64, flat), 64 * 196608), 0.001);
  EXPECT_EQ(ErrorOf([&] { BandwidthRatio(one, 0); }), ErrorCode::kInvalidConfig);
}

TEST(Stream, LocalShardsConcatenate) {
  TempDir dir;
  const auto a = RandomRecords(7, 10), b = RandomRecords(5, 11);
  WriteBytes(dir.path / ShardName(0), EncodeShard(a));
  WriteBytes(dir.path / ShardName(1), EncodeShard(b));
  EXPECT_EQ(ShardName(1), "shard-00001.tshd");
  RecordStream s(OpenDirectorySource(dir.path.string()), {});
  auto got = Drain(s);
  auto want = a;
  want.insert(want.end(), b.begin(), b.end());
  EXPECT_EQ(got, want);
  EXPECT_EQ(s.stats().shards_read, 2u);
  EXPECT_EQ(s.stats().records, 12u);
}

TEST(Stream, PrefetchDepthChangesOnlyTiming) {
  TempDir dir;
  std::vector<Record> all;
  for (std::uint32_t i = 0; i < 12; ++i) {
    const auto r = RandomRecords(3 + i % 4, 100 + i);
    all.insert(all.end(), r.begin(), r.end());
    WriteBytes(dir.path / ShardName(i), EncodeShard(r));
  }
  for (std::size_t depth : {1u, 2u, 4u}) {
    RecordStream s(OpenDirectorySource(dir.path.string()), {depth, false});
    EXPECT_EQ(Drain(s), all) << depth;
    EXPECT_LE(s.stats().peak_buffered, depth);
    EXPECT_GE(s.stats().peak_buffered, 1u);
  }
}

TEST(Stream, CorruptShardFailsFastOrSkips) {
  TempDir dir;
  const auto a = RandomRecords(4, 20), b = RandomRecords(4, 21), c = RandomRecords(4, 22);
  WriteBytes(dir.path / ShardName(0), EncodeShard(a));
  auto bad = EncodeShard(b);
  bad.resize(bad.size() - 10);
  WriteBytes(dir.path / ShardName(1), bad);
  WriteBytes(dir.path / ShardName(2), EncodeShard(c));
  {
    RecordStream s(OpenDirectorySource(dir.path.string()), {});
    for (int i = 0; i < 4; ++i) ASSERT_TRUE(s.Next());
    EXPECT_EQ(ErrorOf([&] { s.Next(); }), ErrorCode::kChecksumMismatch);
  }
  RecordStream s(OpenDirectorySource(dir.path.string()), {2, true});
  auto got = Drain(s);
  auto want = a;
  want.insert(want.end(), c.begin(), c.end());
  EXPECT_EQ(got, want);
  EXPECT_EQ(s.stats().shards_skipped, 1u);
}

TEST(Stream, SingleFileSource) {
  TempDir dir;
  const auto a = RandomRecords(6, 30);
  const auto file = dir.path / "one.tshd";
  WriteBytes(file, EncodeShard(a));
  RecordStream s(OpenSource(file.string()), {});
  EXPECT_EQ(Drain(s), a);
  EXPECT_EQ(ErrorOf([&] { OpenSource((dir.path / "missing").string()); }), ErrorCode::kFetchFailed);
}

class HttpShardServer {
 public:
  explicit HttpShardServer(std::map<std::string, Bytes> files) : files_(std::move(files)) {
    server_.Get(R"(/data/(shard-\d+\.tshd))", [this](const httplib::Request& req,
                                                    httplib::Response& res) {
      const std::string name = req.matches[1];
      ++requests_;
      auto it = files_.find(name);
      if (it == files_.end()) {
        res.status = 404;
        return;
      }
      const std::string body(it->second.begin(), it->second.end());
      if (fail_first_ && !failed_.count(name)) {
        failed_.insert(name);
        res.status = 503;
        return;
      }
      if (cut_first_ && !cut_.count(name) && !req.has_header("Range")) {
        cut_.insert(name);
        // Send half the body, then drop the connection.
        res.set_content_provider(body.size(), "application/octet-stream",
                                 [body](std::size_t offset, std::size_t, httplib::DataSink& sink) {
                                   if (offset > 0) return false;
                                   sink.write(body.data(), body.size() / 2);
                                   return false;
                                 });
        return;
      }
      if (req.has_header("Range")) ++ranged_;
      res.set_content(body, "application/octet-stream");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~HttpShardServer() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/data"; }

  std::atomic<bool> fail_first_{false};
  std::atomic<bool> cut_first_{false};
  std::atomic<int> requests_{0};
  std::atomic<int> ranged_{0};

 private:
  std::map<std::string, Bytes> files_;
  std::set<std::string> failed_, cut_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

TEST(HttpStream, FetchesUntilNotFound) {
  const auto a = RandomRecords(5, 40), b = RandomRecords(6, 41);
  HttpShardServer srv({{ShardName(0), EncodeShard(a)}, {ShardName(1), EncodeShard(b)}});
  RecordStream s(OpenHttpSource(srv.url(), 3, 0.0), {2, false});
  auto want = a;
  want.insert(want.end(), b.begin(), b.end());
  EXPECT_EQ(Drain(s), want);
  EXPECT_EQ(srv.requests_.load(), 3);
}

TEST(HttpStream, RetriesServerErrors) {
  const auto a = RandomRecords(5, 42);
  HttpShardServer srv({{ShardName(0), EncodeShard(a)}});
  srv.fail_first_ = true;
  RecordStream s(OpenHttpSource(srv.url(), 2, 0.0), {});
  EXPECT_EQ(Drain(s), a);
}

TEST(HttpStream, ResumesWithRangeAfterDroppedConnection) {
  const auto a = RandomRecords(50, 43);
  HttpShardServer srv({{ShardName(0), EncodeShard(a)}});
  srv.cut_first_ = true;
  RecordStream s(OpenHttpSource(srv.url(), 2, 0.0), {});
  EXPECT_EQ(Drain(s), a);
  EXPECT_EQ(srv.ranged_.load(), 1);
}

TEST(HttpStream, ExhaustedRetriesRaiseFetchFailed) {
  // Nothing listens on this port once the server is gone.
  std::string url;
  {
    HttpShardServer srv({});
    url = srv.url();
  }
  RecordStream s(OpenHttpSource(url, 1, 0.0), {});
  EXPECT_EQ(ErrorOf([&] { s.Next(); }), ErrorCode::kFetchFailed);
}

}  // namespace
}  // namespace swarm::data
