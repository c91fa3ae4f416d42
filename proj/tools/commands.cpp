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

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "swarm/data_stream.hpp"
#include "swarm/error.hpp"
#include "swarm/mem_calc.hpp"
#include "swarm/protocol.hpp"
#include "swarm/random.hpp"
#include "swarm/swarm_sim.hpp"

namespace swarm::cli {
namespace {

namespace fs = std::filesystem;

struct MemcalcArgs {
  std::string preset = "gpt2-large";
  std::uint32_t opt_bits = 32;
  bool offload = false;
  bool checkpointing = false;
  std::uint64_t sharing = 1;
  std::uint64_t batch = 1;
  std::uint64_t seq = 1024;
  bool json = false;
  bool list = false;
};

void AddMemcalcOptions(CLI::App* app, MemcalcArgs& a) {
  app->add_option("--preset", a.preset, "model preset")->capture_default_str();
  app->add_option("--opt-bits", a.opt_bits, "optimizer state bits (32 or 8)")
      ->check(CLI::IsMember({32, 8}))
      ->capture_default_str();
  app->add_flag("--offload", a.offload, "keep optimizer state in host memory");
  app->add_flag("--checkpointing", a.checkpointing, "gradient checkpointing");
  app->add_option("--sharing", a.sharing, "parameter sharing factor")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app->add_option("--batch", a.batch, "per-device batch size")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app->add_option("--seq", a.seq, "sequence length")->check(CLI::PositiveNumber)->capture_default_str();
  app->add_flag("--json", a.json, "print JSON instead of a table");
  app->add_flag("--list-presets", a.list, "list presets and exit");
}

int DoMemcalc(const MemcalcArgs& a, std::ostream& out) {
  if (a.list) {
    for (const auto& p : memcalc::Presets()) {
      out << p.name << "\t" << p.Params() << "\t" << p.source << "\n";
    }
    return kExitOk;
  }
  memcalc::TechniqueFlags flags{a.opt_bits, a.offload, a.checkpointing, a.sharing};
  const auto report =
      memcalc::ComputeMemoryReport(memcalc::FindPreset(a.preset), flags, a.batch, a.seq);
  out << (a.json ? report.ToJson() + "\n" : report.ToTable());
  return kExitOk;
}

void WriteFile(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  f << text;
  if (!f) throw Error(ErrorCode::kIoError, "write failed: " + path.string());
}

std::string ReadText(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int DoSimulate(const std::string& scenario_path, const std::string& outdir, bool trace,
               std::ostream& out, std::ostream& err) {
  sim::Scenario sc;
  try {
    sc = sim::LoadScenario(scenario_path);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  sim::SimOptions opts;
  opts.trace = trace;
  const auto result = sim::RunSimulation(sc, opts);
  fs::create_directories(outdir);
  const fs::path dir(outdir);
  if (trace) WriteFile(dir / "trace.txt", result.trace);
  if (!result.completed) {
    err << "aborted after " << result.rounds.size() << " of " << sc.rounds
        << " rounds: " << result.abort_reason << "\n";
    std::error_code ec;
    fs::remove(dir / "metrics.csv", ec);
    return kExitAborted;
  }
  WriteFile(dir / "metrics.csv", sim::MetricsCsv(result));
  WriteFile(dir / "ledger.json", result.ledger.ToJson() + "\n");
  const auto& last = result.rounds.back();
  char line[256];
  std::snprintf(line, sizeof line,
                "%s: %zu rounds, final loss %.6g, %u live peers, %" PRIu64
                " bytes, %.3f simulated seconds\n",
                sc.name.c_str(), result.rounds.size(), last.loss, last.live_peers,
                result.total_bytes_sent, result.sim_seconds);
  out << line;
  return kExitOk;
}

struct DemoArgs {
  std::string task = "logreg";
  std::uint32_t peers = 4;
  std::uint64_t rounds = 50;
  std::string codec = "lossless";
  std::string mode = "star";
  std::uint64_t seed = 0;
  std::uint64_t dim = 20;
  std::uint64_t samples = 4096;
  std::uint64_t target_batch = 256;
};

sim::Scenario DemoScenario(const DemoArgs& a) {
  sim::Scenario sc;
  sc.name = "train-demo";
  sc.seed = a.seed;
  sc.rounds = a.rounds;
  sc.target_batch = a.target_batch;
  sc.task = {a.task, a.dim, a.samples, a.seed};
  sc.mode = a.mode == "partitioned" ? sim::AggregationMode::kPartitioned : sim::AggregationMode::kStar;
  if (a.codec == "lossless") {
    sc.codec.lossless = true;
  } else if (a.codec == "q8") {
    sc.codec.q8_threshold = 1;  // quantize every tensor regardless of size
  }
  sc.optimizer = optim::OptimConfig::Adam();
  sc.schedule = {a.rounds, 0.1, 0.05, 0.0};
  sc.network.seed = a.seed;
  for (std::uint32_t i = 0; i < a.peers; ++i) {
    sim::PeerSpec p;
    p.id = "peer" + std::to_string(i);
    p.token = "demo-token-" + std::to_string(i);
    p.speed = 400;
    p.microbatch = 16;
    sc.peers.push_back(p);
  }
  sc.Validate();
  return sc;
}

int DoTrainDemo(const DemoArgs& a, std::ostream& out, std::ostream& err) {
  sim::Scenario sc;
  try {
    sc = DemoScenario(a);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  sim::SimOptions opts;
  opts.trace = false;
  opts.record_params = true;
  const auto result = sim::RunSimulation(sc, opts);
  if (!result.completed) {
    err << "aborted: " << result.abort_reason << "\n";
    return kExitAborted;
  }
  const auto baseline = sim::ReplaySingleNode(sc, result);
  double divergence = 0.0;
  for (std::size_t r = 0; r < baseline.size(); ++r) {
    for (std::size_t j = 0; j < baseline[r].size(); ++j) {
      divergence = std::max(
          divergence, std::abs(static_cast<double>(result.param_history[r][j]) - baseline[r][j]));
    }
  }
  auto task = tasks::MakeTask(sc.task);
  char line[256];
  std::snprintf(line, sizeof line, "task %s, %u peers, %" PRIu64 " rounds, codec %s\n",
                a.task.c_str(), a.peers, a.rounds, a.codec.c_str());
  out << line;
  std::snprintf(line, sizeof line, "swarm final loss    %.9g\nbaseline final loss %.9g\n",
                result.rounds.back().loss,
                task->MeanLoss(std::span<const float>(baseline.back())));
  out << line;
  std::snprintf(line, sizeof line, "max parameter divergence %.9g\n", divergence);
  out << line;
  return kExitOk;
}

std::vector<data::Record> ReadJsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::vector<data::Record> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      data::Record r;
      r.caption_tokens = j.at("caption").get<std::vector<std::uint32_t>>();
      for (auto v : j.at("codes").get<std::vector<std::int64_t>>()) {
        if (v < 0 || v >= data::kCodebookSize) {
          throw Error(ErrorCode::kCodeOutOfRange, "code " + std::to_string(v) + " out of range");
        }
        r.image_codes.push_back(static_cast<std::uint16_t>(v));
      }
      r.Validate();
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kInvalidConfig,
                  path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

std::string RecordJson(const data::Record& r) {
  nlohmann::json j;
  j["caption"] = r.caption_tokens;
  j["codes"] = r.image_codes;
  return j.dump();
}

std::vector<data::Record> RandomRecords(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<data::Record> out(n);
  for (auto& r : out) {
    r.caption_tokens.resize(rng.below(64));
    for (auto& t : r.caption_tokens) t = static_cast<std::uint32_t>(rng.below(16384));
    r.image_codes.resize(data::kCodesPerRecord);
    for (auto& c : r.image_codes) c = static_cast<std::uint16_t>(rng.below(data::kCodebookSize));
  }
  return out;
}

void WriteShards(const std::vector<data::Record>& records, const fs::path& out,
                 std::size_t per_shard, std::ostream& log) {
  if (per_shard == 0) {
    const auto bytes = data::EncodeShard(records);
    WriteFile(out, std::string(bytes.begin(), bytes.end()));
    log << out.string() << ": " << records.size() << " records, " << bytes.size() << " bytes\n";
    return;
  }
  fs::create_directories(out);
  std::uint32_t index = 0;
  for (std::size_t i = 0; i < records.size(); i += per_shard, ++index) {
    const std::size_t end = std::min(records.size(), i + per_shard);
    const auto bytes = data::EncodeShard(
        std::span<const data::Record>(records.data() + i, end - i));
    const fs::path file = out / data::ShardName(index);
    WriteFile(file, std::string(bytes.begin(), bytes.end()));
    log << file.string() << ": " << end - i << " records, " << bytes.size() << " bytes\n";
  }
}

int DoShardInspect(const std::string& path, std::ostream& out) {
  const std::string text = ReadText(path);
  std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(text.data()),
                                      text.size());
  const auto h = data::InspectShard(bytes);
  const auto records = data::DecodeShard(bytes);
  std::uint64_t caption_tokens = 0;
  for (const auto& r : records) caption_tokens += r.caption_tokens.size();
  char line[512];
  std::snprintf(line, sizeof line,
                "version            %u\nrecord_count       %" PRIu32
                "\nuncompressed_len   %" PRIu64 "\nchecksum           %016" PRIx64
                "\ncompressed_len     %" PRIu64 "\nrecords_decoded    %zu\ncaption_tokens     %" PRIu64
                "\nratio_vs_raw_rgb   %.6f\n",
                h.version, h.record_count, h.uncompressed_len, h.checksum, h.compressed_len,
                records.size(), caption_tokens,
                static_cast<double>(bytes.size()) /
                    (static_cast<double>(records.size()) * 256.0 * 256.0 * 3.0));
  out << line;
  return kExitOk;
}

int DoLedger(const std::string& path, std::size_t top, std::ostream& out) {
  const auto ledger = protocol::Ledger::FromJson(ReadText(path));
  const auto board = ledger.Leaderboard(top);
  char line[256];
  std::snprintf(line, sizeof line, "%-5s %-24s %12s %14s\n", "rank", "peer", "samples",
                "compute_s");
  out << line;
  for (std::size_t i = 0; i < board.size(); ++i) {
    std::snprintf(line, sizeof line, "%-5zu %-24s %12" PRIu64 " %14.3f\n", i + 1,
                  board[i].peer_id.value.c_str(), board[i].samples, board[i].wall_seconds);
    out << line;
  }
  return kExitOk;
}

int ExitFor(const Error& e) {
  switch (e.code()) {
    case ErrorCode::kInvalidConfig:
    case ErrorCode::kInvalidPolicy:
      return kExitConfig;
    default:
      return kExitFailure;
  }
}

// CLI11 consumes argument vectors in reverse order.
std::vector<std::string> Reversed(std::vector<std::string> args) {
  std::reverse(args.begin(), args.end());
  return args;
}

}  // namespace

int RunSwarmctl(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Collaborative training simulator and tooling", "swarmctl"};
  app.require_subcommand(1);

  std::string scenario;
  std::string outdir = "out";
  bool no_trace = false;
  auto* simulate = app.add_subcommand("simulate", "run a scenario; writes metrics.csv, trace.txt, ledger.json");
  simulate->add_option("scenario", scenario, "scenario file (JSON)")->required();
  simulate->add_option("-o,--out", outdir, "output directory")->capture_default_str();
  simulate->add_flag("--no-trace", no_trace, "skip the event trace");

  DemoArgs demo;
  auto* train = app.add_subcommand("train-demo", "swarm run vs single-node baseline");
  train->add_option("--task", demo.task, "quadratic, logreg or mlp")
      ->check(CLI::IsMember({"quadratic", "logreg", "mlp"}))
      ->capture_default_str();
  train->add_option("--peers", demo.peers)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--rounds", demo.rounds)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--codec", demo.codec, "lossless, auto (size-based) or q8")
      ->check(CLI::IsMember({"lossless", "auto", "q8"}))
      ->capture_default_str();
  train->add_option("--mode", demo.mode)->check(CLI::IsMember({"star", "partitioned"}))->capture_default_str();
  train->add_option("--seed", demo.seed)->capture_default_str();
  train->add_option("--dim", demo.dim)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--samples", demo.samples)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--target-batch", demo.target_batch)->check(CLI::PositiveNumber)->capture_default_str();

  MemcalcArgs mem;
  auto* memcalc = app.add_subcommand("memcalc", "memory footprint calculator");
  AddMemcalcOptions(memcalc, mem);

  auto* shard = app.add_subcommand("shard", "shard pack | unpack | inspect | random");
  shard->require_subcommand(1);
  std::string in_path;
  std::string out_path;
  std::size_t per_shard = 0;
  std::size_t random_count = 100;
  std::uint64_t random_seed = 0;
  auto* pack = shard->add_subcommand("pack", "JSONL records -> shard file or directory");
  pack->add_option("input", in_path, "JSONL with {\"caption\": [...], \"codes\": [...]}")->required();
  pack->add_option("output", out_path)->required();
  pack->add_option("--per-shard", per_shard, "split into a directory of shards of this size");
  auto* unpack = shard->add_subcommand("unpack", "shard, directory or URL -> JSONL");
  unpack->add_option("source", in_path)->required();
  unpack->add_option("output", out_path)->required();
  bool skip_corrupt = false;
  std::size_t prefetch = 2;
  unpack->add_flag("--skip-corrupt", skip_corrupt);
  unpack->add_option("--prefetch", prefetch)->check(CLI::PositiveNumber)->capture_default_str();
  auto* inspect = shard->add_subcommand("inspect", "print a shard header");
  inspect->add_option("shard", in_path)->required();
  auto* random = shard->add_subcommand("random", "write random records as shards");
  random->add_option("output", out_path)->required();
  random->add_option("--records", random_count)->capture_default_str();
  random->add_option("--seed", random_seed)->capture_default_str();
  random->add_option("--per-shard", per_shard);

  std::string ledger_path;
  std::size_t top = 10;
  auto* ledger = app.add_subcommand("ledger", "leaderboard from a ledger.json");
  ledger->add_option("state", ledger_path)->required();
  ledger->add_option("--top", top)->capture_default_str();

  try {
    auto argv = Reversed(args);
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*simulate) return DoSimulate(scenario, outdir, !no_trace, out, err);
    if (*train) return DoTrainDemo(demo, out, err);
    if (*memcalc) return DoMemcalc(mem, out);
    if (*pack) {
      WriteShards(ReadJsonl(in_path), out_path, per_shard, out);
      return kExitOk;
    }
    if (*random) {
      WriteShards(RandomRecords(random_count, random_seed), out_path, per_shard, out);
      return kExitOk;
    }
    if (*unpack) {
      data::RecordStream stream(data::OpenSource(in_path), {prefetch, skip_corrupt});
      std::ofstream f(out_path);
      if (!f) throw Error(ErrorCode::kIoError, "cannot write " + out_path);
      std::size_t n = 0;
      while (auto r = stream.Next()) {
        f << RecordJson(*r) << "\n";
        ++n;
      }
      const auto st = stream.stats();
      out << out_path << ": " << n << " records from " << st.shards_read << " shards";
      if (st.shards_skipped) out << " (" << st.shards_skipped << " damaged shards skipped)";
      out << "\n";
      return kExitOk;
    }
    if (*inspect) return DoShardInspect(in_path, out);
    if (*ledger) return DoLedger(ledger_path, top, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return ExitFor(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitConfig;
}

int RunMemcalc(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Training memory calculator", "memcalc"};
  MemcalcArgs mem;
  AddMemcalcOptions(&app, mem);
  try {
    auto argv = Reversed(args);
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  try {
    return DoMemcalc(mem, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return ExitFor(e);
  }
}

}  // namespace swarm::cli
