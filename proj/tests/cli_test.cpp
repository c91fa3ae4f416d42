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

#include "commands.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include <nlohmann/json.hpp>

#ifndef SWARM_SOURCE_DIR
#define SWARM_SOURCE_DIR "."
#endif

namespace swarm::cli {
namespace {

namespace fs = std::filesystem;

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run Ctl(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = RunSwarmctl(args, out, err);
  return {code, out.str(), err.str()};
}

Run Mem(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = RunMemcalc(args, out, err);
  return {code, out.str(), err.str()};
}

std::string Slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct TempDir {
  TempDir() {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() /
           ("swarm_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
  fs::path path;
};

std::vector<std::vector<std::string>> Csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

double DivergenceOf(const std::string& out) {
  const auto pos = out.find("max parameter divergence ");
  EXPECT_NE(pos, std::string::npos) << out;
  return std::stod(out.substr(pos + 25));
}

const std::string kScenarios = SWARM_SOURCE_DIR "/scenarios/";

TEST(Simulate, HomogeneousDeterministicCsv) {
  TempDir a, b;
  const auto r1 = Ctl({"simulate", kScenarios + "homogeneous4.scenario", "-o", a / "run"});
  ASSERT_EQ(r1.code, kExitOk) << r1.err;
  const auto r2 = Ctl({"simulate", kScenarios + "homogeneous4.scenario", "-o", b / "run"});
  ASSERT_EQ(r2.code, kExitOk) << r2.err;
  const auto csv = Slurp(a / "run/metrics.csv");
  EXPECT_EQ(csv, Slurp(b / "run/metrics.csv"));
  EXPECT_EQ(Slurp(a / "run/trace.txt"), Slurp(b / "run/trace.txt"));
  const auto rows = Csv(csv);
  ASSERT_EQ(rows.size(), 201u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"round", "loss", "live_peers", "bytes_total",
                                               "sim_seconds"}));
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_EQ(std::stoul(rows[i][0]), i - 1);
  EXPECT_TRUE(fs::exists(a / "run/ledger.json"));
}

TEST(Simulate, ChurnLivePeersColumn) {
  TempDir d;
  const auto r = Ctl({"simulate", kScenarios + "churn5.scenario", "-o", d / "out", "--no-trace"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto rows = Csv(Slurp(d / "out/metrics.csv"));
  ASSERT_EQ(rows.size(), 101u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto round = std::stoul(rows[i][0]);
    const std::string want = round < 50 ? "5" : round <= 70 ? "3" : "4";
    EXPECT_EQ(rows[i][2], want) << round;
  }
  EXPECT_FALSE(fs::exists(d / "out/trace.txt"));
}

TEST(Simulate, ExitCodes) {
  TempDir d;
  {
    std::ofstream f(d / "bad.scenario");
    f << R"({"peers": []})";
  }
  EXPECT_EQ(Ctl({"simulate", d / "bad.scenario", "-o", d / "o1"}).code, kExitConfig);
  EXPECT_EQ(Ctl({"simulate", d / "missing.scenario", "-o", d / "o2"}).code, kExitConfig);
  {
    std::ofstream f(d / "abort.scenario");
    f << R"({"rounds": 20, "peers": [{"id": "solo", "token": "t"}],
             "churn": [{"event": "crash", "peer": "solo", "round": 2}]})";
  }
  const auto r = Ctl({"simulate", d / "abort.scenario", "-o", d / "o3"});
  EXPECT_EQ(r.code, kExitAborted);
  EXPECT_FALSE(fs::exists(d / "o3/metrics.csv"));
  EXPECT_EQ(Ctl({"frobnicate"}).code, kExitConfig);
  EXPECT_EQ(Ctl({}).code, kExitConfig);
}

TEST(TrainDemo, Divergence) {
  const auto lossless = Ctl({"train-demo", "--task", "logreg", "--peers", "4", "--rounds", "30"});
  ASSERT_EQ(lossless.code, kExitOk) << lossless.err;
  EXPECT_EQ(DivergenceOf(lossless.out), 0.0);
  const auto q8 = Ctl({"train-demo", "--peers", "4", "--rounds", "30", "--codec", "q8"});
  ASSERT_EQ(q8.code, kExitOk) << q8.err;
  const double d = DivergenceOf(q8.out);
  EXPECT_GT(d, 0.0);
  EXPECT_LT(d, 0.05);
  const auto one = Ctl({"train-demo", "--task", "mlp", "--peers", "1", "--rounds", "10"});
  ASSERT_EQ(one.code, kExitOk) << one.err;
  EXPECT_EQ(DivergenceOf(one.out), 0.0);
  const auto part = Ctl({"train-demo", "--task", "quadratic", "--mode", "partitioned", "--rounds",
                         "10", "--peers", "3"});
  ASSERT_EQ(part.code, kExitOk) << part.err;
  EXPECT_EQ(DivergenceOf(part.out), 0.0);
  EXPECT_EQ(Ctl({"train-demo", "--task", "resnet"}).code, kExitConfig);
}

TEST(Memcalc, Gpt2LargeExamples) {
  auto json = [](std::vector<std::string> extra) {
    std::vector<std::string> args{"--preset", "gpt2-large", "--json"};
    args.insert(args.end(), extra.begin(), extra.end());
    const auto r = Mem(args);
    EXPECT_EQ(r.code, kExitOk) << r.err;
    return nlohmann::json::parse(r.out);
  };
  const auto fp32 = json({});
  EXPECT_EQ(fp32["device"]["optimizer_state"].get<std::uint64_t>(), 6'192'000'000u);
  const auto q8 = json({"--opt-bits", "8"});
  EXPECT_EQ(q8["device"]["optimizer_state"].get<std::uint64_t>(), 1'549'511'720u);
  const auto off = json({"--opt-bits", "8", "--offload"});
  EXPECT_EQ(off["device"]["optimizer_state"].get<std::uint64_t>(), 0u);
  EXPECT_EQ(off["host"]["offloaded_state"].get<std::uint64_t>(), 1'549'511'720u);
  // Same output through the swarmctl subcommand.
  const auto sub = Ctl({"memcalc", "--preset", "gpt2-large", "--json", "--opt-bits", "8"});
  EXPECT_EQ(nlohmann::json::parse(sub.out), q8);
}

TEST(Memcalc, TableAndErrors) {
  const auto t = Mem({"--preset", "dalle-1.1b", "--checkpointing", "--sharing", "8"});
  ASSERT_EQ(t.code, kExitOk);
  EXPECT_NE(t.out.find("137500000 stored"), std::string::npos) << t.out;
  EXPECT_NE(Mem({"--list-presets"}).out.find("gpt-j-6b"), std::string::npos);
  EXPECT_EQ(Mem({"--preset", "nope"}).code, kExitConfig);
  EXPECT_EQ(Mem({"--opt-bits", "16"}).code, kExitConfig);
  EXPECT_EQ(Mem({"--sharing", "0"}).code, kExitConfig);
}

TEST(Shard, PackUnpackInspect) {
  TempDir d;
  {
    std::ofstream f(d / "in.jsonl");
    for (int i = 0; i < 5; ++i) {
      nlohmann::json j;
      j["caption"] = std::vector<int>{i, i + 1, 100000};
      std::vector<int> codes(1024);
      for (int k = 0; k < 1024; ++k) codes[k] = (k * 37 + i) % 8192;
      j["codes"] = codes;
      f << j.dump() << "\n";
    }
  }
  ASSERT_EQ(Ctl({"shard", "pack", d / "in.jsonl", d / "one.tshd"}).code, kExitOk);
  ASSERT_EQ(Ctl({"shard", "unpack", d / "one.tshd", d / "out.jsonl"}).code, kExitOk);
  EXPECT_EQ(Slurp(d / "out.jsonl"), Slurp(d / "in.jsonl"));
  const auto insp = Ctl({"shard", "inspect", d / "one.tshd"});
  ASSERT_EQ(insp.code, kExitOk);
  EXPECT_NE(insp.out.find("record_count       5"), std::string::npos) << insp.out;
  EXPECT_NE(insp.out.find("records_decoded    5"), std::string::npos) << insp.out;

  ASSERT_EQ(Ctl({"shard", "pack", d / "in.jsonl", d / "dir", "--per-shard", "2"}).code, kExitOk);
  EXPECT_TRUE(fs::exists(d / "dir/shard-00002.tshd"));
  ASSERT_EQ(Ctl({"shard", "unpack", d / "dir", d / "out2.jsonl", "--prefetch", "1"}).code, kExitOk);
  EXPECT_EQ(Slurp(d / "out2.jsonl"), Slurp(d / "in.jsonl"));
}

TEST(Shard, RandomAndCorruption) {
  TempDir d;
  ASSERT_EQ(Ctl({"shard", "random", d / "r", "--records", "30", "--per-shard", "10"}).code, kExitOk);
  std::string bytes = Slurp(d / "r/shard-00001.tshd");
  bytes[bytes.size() / 2] ^= 0x5a;
  {
    std::ofstream f(d / "r/shard-00001.tshd", std::ios::binary);
    f << bytes;
  }
  EXPECT_EQ(Ctl({"shard", "unpack", d / "r", d / "x.jsonl"}).code, kExitFailure);
  ASSERT_EQ(Ctl({"shard", "unpack", d / "r", d / "y.jsonl", "--skip-corrupt"}).code, kExitOk);
  std::ifstream f(d / "y.jsonl");
  int lines = 0;
  for (std::string l; std::getline(f, l);) ++lines;
  EXPECT_EQ(lines, 20);
  {
    std::ofstream bad(d / "bad.jsonl");
    bad << R"({"caption": [], "codes": [8192]})" << "\n";
  }
  EXPECT_EQ(Ctl({"shard", "pack", d / "bad.jsonl", d / "bad.tshd"}).code, kExitFailure);
}

TEST(Ledger, LeaderboardOrder) {
  TempDir d;
  {
    std::ofstream f(d / "ledger.json");
    f << R"({"peers": [
      {"peer_id": "carol", "samples": 10, "wall_seconds": 10},
      {"peer_id": "bob", "samples": 20, "wall_seconds": 30},
      {"peer_id": "alice", "samples": 30, "wall_seconds": 10},
      {"peer_id": "dave", "samples": 40, "wall_seconds": 20}]})";
  }
  const auto r = Ctl({"ledger", d / "ledger.json"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto b = r.out.find("bob"), dv = r.out.find("dave"), a = r.out.find("alice"),
             c = r.out.find("carol");
  EXPECT_LT(b, dv);
  EXPECT_LT(dv, a);
  EXPECT_LT(a, c);
  const auto top = Ctl({"ledger", d / "ledger.json", "--top", "2"});
  EXPECT_EQ(top.out.find("alice"), std::string::npos);
  EXPECT_EQ(Ctl({"ledger", d / "missing.json"}).code, kExitFailure);
}

}  // namespace
}  // namespace swarm::cli
