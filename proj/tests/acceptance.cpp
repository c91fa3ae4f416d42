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

// Acceptance gate. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "swarm/data_stream.hpp"
#include "swarm/desk_tasks.hpp"
#include "swarm/mem_calc.hpp"
#include "swarm/optimizers.hpp"
#include "swarm/protocol.hpp"
#include "swarm/random.hpp"
#include "swarm/swarm_sim.hpp"
#include "swarm/tensor_codec.hpp"
#include "swarm/wire.hpp"
#include "test_support.hpp"

#ifndef SWARM_SOURCE_DIR
#define SWARM_SOURCE_DIR "."
#endif

namespace swarm {
namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string Fmt(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

const std::string kScenarios = SWARM_SOURCE_DIR "/scenarios/";

double Dist(std::span<const float> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Single-node large-batch baseline. For each round it evaluates the union
// batch the peers drew, summed per peer in draw order and combined in peer-id
// order, then takes one optimizer step.
std::vector<std::vector<float>> UnionBatchBaseline(const sim::Scenario& sc,
                                                   const sim::SimResult& run) {
  auto task = tasks::MakeTask(sc.task);
  std::vector<float> w = tasks::ToFloat(task->InitialParams());
  optim::Optimizer opt(sc.optimizer, w.size(), task->Layers());
  std::vector<std::vector<float>> history;
  for (const auto& r : run.rounds) {
    const std::size_t dim = w.size();
    const auto wd = tasks::ToDouble(w);
    std::vector<double> acc(dim, 0.0);
    double total = 0.0;
    for (const auto& [peer, s] : r.samples_by_peer) total += static_cast<double>(s);
    for (const auto& [peer, s] : r.samples_by_peer) {  // std::map: sorted by id
      sim::SampleStream stream(sc.seed, peer, r.round, task->num_samples());
      std::vector<double> sum(dim, 0.0);
      for (std::uint64_t k = 0; k < s; ++k) task->AddGrad(wd, stream.Next(), sum);
      for (std::size_t j = 0; j < dim; ++j) {
        // Per-peer means travel as fp32 on the lossless wire.
        const float mean = static_cast<float>(sum[j] / static_cast<double>(s));
        acc[j] += static_cast<double>(s) * static_cast<double>(mean);
      }
    }
    std::vector<float> g(dim);
    for (std::size_t j = 0; j < dim; ++j) g[j] = static_cast<float>(acc[j] / total);
    opt.Step(w, g, optim::LrAt(std::min(r.round + 1, sc.schedule.total_steps), sc.schedule));
    history.push_back(w);
  }
  return history;
}

Outcome Ac1() {
  const auto sc = sim::LoadScenario(kScenarios + "homogeneous4.scenario");
  sim::SimOptions opts;
  opts.record_params = true;
  const auto t0 = std::chrono::steady_clock::now();
  const auto run = sim::RunSimulation(sc, opts);
  const auto base = UnionBatchBaseline(sc, run);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!run.completed) return {false, "run aborted: " + run.abort_reason};
  std::size_t mismatched = 0;
  for (std::size_t r = 0; r < base.size(); ++r) mismatched += run.param_history[r] != base[r];
  const bool ok = sc.peers.size() == 4 && sc.codec.lossless && sc.task.name == "logreg" &&
                  sc.task.dim == 20 && sc.task.samples == 4096 && run.rounds.size() == 200 &&
                  mismatched == 0 && secs < 60.0;
  return {ok, Fmt("%zu rounds, %zu differ from baseline, %.2f s", run.rounds.size(), mismatched,
                  secs)};
}

Outcome Ac2() {
  auto homo = sim::LoadScenario(kScenarios + "homogeneous4.scenario");
  homo.target_batch = 1024;
  for (auto& p : homo.peers) {
    p.speed = 375;  // same aggregate throughput as 100 + 200 + 400 + 800
    p.microbatch = 8;
  }
  auto het = homo;
  const double speeds[] = {100, 200, 400, 800};
  for (int i = 0; i < 4; ++i) het.peers[i].speed = speeds[i];
  const auto h = sim::RunSimulation(homo);
  const auto r = sim::RunSimulation(het);
  if (!h.completed || !r.completed) return {false, "run aborted"};
  std::size_t bad_rounds = 0;
  std::map<std::string, double> totals;
  double all = 0;
  for (const auto& m : r.rounds) {
    if (m.contributed_samples < het.target_batch ||
        m.contributed_samples >= het.target_batch + het.max_microbatch()) {
      ++bad_rounds;
    }
    for (const auto& [p, s] : m.samples_by_peer) {
      totals[p] += static_cast<double>(s);
      all += static_cast<double>(s);
    }
  }
  double worst_share = 0;
  for (int i = 0; i < 4; ++i) {
    const double expected = all * speeds[i] / 1500.0;
    worst_share = std::max(worst_share, std::abs(totals[het.peers[i].id] - expected) / expected);
  }
  const double lh = h.rounds.back().loss, lr = r.rounds.back().loss;
  const double rel = std::abs(lr - lh) / lh;
  const bool ok = bad_rounds == 0 && worst_share <= 0.30 && rel <= 0.01;
  return {ok, Fmt("%zu rounds outside [B, B+mb), worst share error %.1f%%, loss %.6g vs %.6g "
                  "(%.3f%%)",
                  bad_rounds, 100 * worst_share, lr, lh, 100 * rel)};
}

Outcome Ac3() {
  const codec::CodecPolicy policy;
  const bool boundary = codec::SelectScheme(65535, policy) != codec::Scheme::kQ8Blockwise &&
                        codec::SelectScheme(65536, policy) == codec::Scheme::kQ8Blockwise;
  SplitMix64 rng(2024);
  std::vector<float> x(1'000'000);
  for (auto& v : x) v = static_cast<float>(rng.normal() * std::pow(10.0, rng.uniform() * 4 - 2));
  const auto chunk = codec::QuantizeQ8(x, policy.block_size);
  const auto y = codec::DequantizeQ8(chunk);
  double worst = 0;  // error / (scale / 2)
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double half = chunk.scales[i / policy.block_size] / 2.0;
    const double err = std::abs(static_cast<double>(y[i]) - x[i]);
    worst = std::max(worst, half > 0 ? err / half : (err > 0 ? INFINITY : 0.0));
  }
  std::vector<float> big(1u << 20);
  for (auto& v : big) v = static_cast<float>(rng.normal());
  const auto bytes = codec::Serialize(codec::QuantizeQ8(big, 4096)).size();
  const double ratio = static_cast<double>(bytes) / (4.0 * (1u << 20));
  const bool size_ok = bytes == 1049600 + codec::kChunkHeaderBytes &&
                       codec::EncodedSize(codec::Scheme::kQ8Blockwise, 1u << 20, 4096) == bytes &&
                       std::abs(ratio - 0.2502) < 1e-4;
  return {boundary && worst <= 1.0 && size_ok,
          Fmt("boundary %s, max error %.4f of scale/2, 2^20 tensor %zu bytes (%.4f%% of fp32)",
              boundary ? "65536" : "wrong", worst, bytes, 100 * ratio)};
}

double UlpDistance(double a, double b) {
  if (a == b) return 0;
  return std::abs(a - b) / (std::nextafter(std::abs(b), INFINITY) - std::abs(b));
}

Outcome Ac4() {
  const optim::ScheduleConfig s;  // 31250 steps, 10% warmup, peak 2.5e-3, end 0
  const bool anchors = optim::LrAt(0, s) == 0.0 && optim::LrAt(3125, s) == 2.5e-3 &&
                       optim::LrAt(31250, s) == s.end_lr;
  SplitMix64 rng(31250);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const std::uint64_t t = rng.below(31251);
    const long double lt = t, peak = s.peak_lr, end = s.end_lr;
    const long double want = t <= 3125 ? peak * lt / 3125.0L
                                       : peak + (end - peak) * (lt - 3125.0L) / (31250.0L - 3125.0L);
    worst = std::max(worst, UlpDistance(optim::LrAt(t, s), static_cast<double>(want)));
  }
  return {anchors && worst <= 1.0,
          Fmt("anchors %s, max deviation %.0f ulp over 100 random steps", anchors ? "exact" : "wrong",
              worst)};
}

Outcome Ac5() {
  auto task = tasks::MakeQuadratic(100, 42);
  const auto opt = *task->Optimum();
  const optim::ScheduleConfig sched{500, 0.1, 0.05, 0.0};
  auto run = [&](optim::StateBits bits) {
    auto cfg = optim::OptimConfig::Lamb();
    cfg.state_bits = bits;
    optim::Optimizer o(cfg, 100);
    std::vector<float> w(100, 0.0f);
    for (std::uint64_t t = 0; t < 500; ++t) {
      std::vector<float> g(100);
      for (int i = 0; i < 100; ++i) g[i] = w[i] - static_cast<float>(opt[i]);
      o.Step(w, g, optim::LrAt(t + 1, sched));
    }
    return w;
  };
  const auto w32 = run(optim::StateBits::k32);
  const auto w8 = run(optim::StateBits::k8);
  const std::vector<double> w32d(w32.begin(), w32.end());
  const std::vector<double> zero(100, 0.0);
  const double rel = Dist(w8, w32d) / Dist(w32, zero);
  const double d32 = Dist(w32, opt), d8 = Dist(w8, opt);
  return {rel <= 1e-2 && d32 <= 1e-3 && d8 <= 1e-3,
          Fmt("relative distance %.3g, to optimum fp32 %.3g, 8-bit %.3g", rel, d32, d8)};
}

Outcome Ac6() {
  const auto sc = sim::LoadScenario(kScenarios + "churn5.scenario");
  const auto r = sim::RunSimulation(sc);
  if (!r.completed) return {false, "aborted: " + r.abort_reason};
  std::size_t bad = 0, rejoiner_rounds = 0;
  for (const auto& m : r.rounds) {
    const bool full = m.peer_hashes.size() == m.live_peers && m.HashesConsistent();
    if (!full) ++bad;
    if (m.round >= 71) {
      auto it = m.peer_hashes.find("peer-2");
      if (it != m.peer_hashes.end() && it->second == m.leader_hash) ++rejoiner_rounds;
    }
  }
  const bool shape = sc.peers.size() == 5 && sc.rounds == 100;
  return {shape && r.rounds.size() == 100 && bad == 0 && rejoiner_rounds == 29,
          Fmt("%zu/100 rounds, %zu with divergent hashes, rejoiner consistent in %zu/29 rounds",
              r.rounds.size(), bad, rejoiner_rounds)};
}

Outcome Ac7() {
  auto clean = sim::LoadScenario(kScenarios + "homogeneous4.scenario");
  sim::PeerSpec fifth = clean.peers.back();
  fifth.id = "peer-e";
  fifth.token = "tok-e";
  clean.peers.push_back(fifth);
  clean.policy = {protocol::AggregationKind::kTrimmedMean, 1.0, 1};
  auto attacked = clean;
  attacked.peers.back().gradient_scale = 1000.0;
  std::size_t outside = 0, checked = 0;
  sim::SimOptions opts;
  opts.trace = false;
  opts.on_aggregate = [&](const sim::AggregateRecord& rec) {
    for (std::size_t j = 0; j < rec.aggregate.size(); ++j) {
      float lo = INFINITY, hi = -INFINITY;
      for (const auto& c : rec.contributions) {
        if (c.peer.value == "peer-e") continue;
        lo = std::min(lo, c.grad[j]);
        hi = std::max(hi, c.grad[j]);
      }
      outside += rec.aggregate[j] < lo || rec.aggregate[j] > hi;
      ++checked;
    }
  };
  const auto a = sim::RunSimulation(attacked, opts);
  sim::SimOptions quiet;
  quiet.trace = false;
  const auto c = sim::RunSimulation(clean, quiet);
  if (!a.completed || !c.completed) return {false, "run aborted"};
  const double la = a.rounds.back().loss, lc = c.rounds.back().loss;
  const double rel = std::abs(la - lc) / lc;
  return {rel <= 0.05 && outside == 0 && checked > 0,
          Fmt("loss %.6g vs clean %.6g (%.2f%%), %zu of %zu coordinates outside honest range", la,
              lc, 100 * rel, outside, checked)};
}

Outcome Ac8() {
  const auto& p = memcalc::FindPreset("gpt2-large");
  const auto fp32 = memcalc::ComputeMemoryReport(p, {32, false, false, 1}, 1, 1024);
  const auto q8 = memcalc::ComputeMemoryReport(p, {8, false, false, 1}, 1, 1024);
  const auto off = memcalc::ComputeMemoryReport(p, {8, true, false, 1}, 1, 1024);
  const std::uint64_t want8 = 1'548'000'000ull + 8ull * ((774'000'000ull + 4095) / 4096);
  const bool ok = fp32.param_count == 774'000'000ull &&
                  fp32.device.optimizer_state == 6'192'000'000ull &&
                  q8.device.optimizer_state == want8 && off.device.optimizer_state == 0 &&
                  off.host.offloaded_state == want8 &&
                  q8.device_total - off.device_total == want8 &&
                  off.host_total - q8.host_total == want8;
  return {ok, Fmt("fp32 %llu, 8-bit %llu, offloaded %llu bytes",
                  static_cast<unsigned long long>(fp32.device.optimizer_state),
                  static_cast<unsigned long long>(q8.device.optimizer_state),
                  static_cast<unsigned long long>(off.host.offloaded_state))};
}

Outcome Ac9() {
  // 64 layers of width 1024, 16 heads, GEGLU feed-forward of width 4096,
  // embeddings tied over 16384 text and 8192 image tokens.
  const memcalc::ArchDims dalle{64, 1024, 16, 16384 + 8192, 0, 4096, true, true, 0};
  const auto n = memcalc::EstimateParamCount(dalle);
  const double rel = std::abs(static_cast<double>(n) - 1.1e9) / 1.1e9;
  const auto stored = memcalc::StoredParams(1'100'000'000ull, 8);
  return {rel <= 0.15 && stored == 137'500'000ull,
          Fmt("estimate %llu (%.3f%% from 1.1e9), stored_params %llu",
              static_cast<unsigned long long>(n), 100 * rel,
              static_cast<unsigned long long>(stored))};
}

std::vector<data::Record> RandomRecords(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<data::Record> out(n);
  for (auto& r : out) {
    r.caption_tokens.resize(rng.below(80));
    for (auto& t : r.caption_tokens) t = static_cast<std::uint32_t>(rng.below(50000));
    r.image_codes.resize(data::kCodesPerRecord);
    for (auto& c : r.image_codes) c = static_cast<std::uint16_t>(rng.below(data::kCodebookSize));
  }
  return out;
}

Outcome Ac10() {
  const auto records = RandomRecords(10'000, 10);
  const auto shard = data::EncodeShard(records);
  const auto back = data::DecodeShard(shard);
  const bool round_trip = back == records && data::EncodeShard(back) == shard;
  const auto packed = data::PackCodes(records[0].image_codes).size();

  // Every single-byte flip of a shard is rejected, and FNV-1a distinguishes
  // every single-byte change of the uncompressed records block.
  const auto small = RandomRecords(12, 11);
  const auto small_shard = data::EncodeShard(small);
  SplitMix64 rng(12);
  std::size_t undetected = 0, flips = 0;
  for (std::size_t i = 0; i < small_shard.size(); ++i) {
    auto bad = small_shard;
    bad[i] ^= static_cast<std::uint8_t>(1 + rng.below(255));
    ++flips;
    try {
      if (data::DecodeShard(bad) == small) ++undetected;
    } catch (const Error&) {
    }
  }
  auto block = data::EncodeRecordsBlock(small);
  const auto sum = Fnv1a64(block);
  std::size_t collisions = 0;
  for (std::size_t i = 0; i < block.size(); ++i) {
    const auto orig = block[i];
    block[i] ^= static_cast<std::uint8_t>(1 + rng.below(255));
    collisions += Fnv1a64(block) == sum;
    block[i] = orig;
  }
  return {round_trip && packed == 1664 && undetected == 0 && collisions == 0,
          Fmt("10000 records %s, %zu packed code bytes/record, %zu/%zu shard flips undetected, "
              "%zu/%zu block flips with unchanged checksum",
              round_trip ? "byte-exact" : "MISMATCH", packed, undetected, flips, collisions,
              block.size())};
}

Outcome Ac11() {
  double worst = 0;
  std::string detail;
  for (const char* name : {"quadratic", "logreg", "mlp"}) {
    tasks::TaskSpec spec;
    spec.name = name;
    spec.dim = 20;
    spec.samples = 512;
    spec.seed = 5;
    const auto task = tasks::MakeTask(spec);
    const double e = swarm::testing::WorstFiniteDifferenceError(*task, 10, 99);
    worst = std::max(worst, e);
    detail += Fmt("%s %.2e ", name, e);
  }
  return {worst <= 1e-4, "worst relative error: " + detail};
}

Outcome Ac12() {
  std::vector<sim::Scenario> scenarios{sim::LoadScenario(kScenarios + "homogeneous4.scenario"),
                                       sim::LoadScenario(kScenarios + "churn5.scenario")};
  auto lossy = scenarios[0];
  lossy.name = "lossy";
  lossy.rounds = 60;
  lossy.schedule.total_steps = 60;
  lossy.mode = sim::AggregationMode::kPartitioned;
  lossy.codec = codec::CodecPolicy{};
  lossy.codec.q8_threshold = 1;
  lossy.network.drop_prob = 0.1;
  lossy.churn = {{sim::ChurnKind::kCrash, "peer-b", 3.0, std::nullopt, 0.0},
                 {sim::ChurnKind::kJoin, "peer-b", 6.0, std::nullopt, 0.0}};
  scenarios.push_back(lossy);
  std::size_t identical = 0;
  for (const auto& sc : scenarios) {
    const auto a = sim::RunSimulation(sc);
    const auto b = sim::RunSimulation(sc);
    identical += a.completed && sim::MetricsCsv(a) == sim::MetricsCsv(b) && a.trace == b.trace &&
                 !a.trace.empty();
  }
  return {identical == scenarios.size(),
          Fmt("%zu/%zu scenarios byte-identical (csv and trace)", identical, scenarios.size())};
}

}  // namespace
}  // namespace swarm

int main() {
  const std::vector<std::pair<const char*, std::function<swarm::Outcome()>>> criteria{
      {"AC1", swarm::Ac1},   {"AC2", swarm::Ac2},   {"AC3", swarm::Ac3},
      {"AC4", swarm::Ac4},   {"AC5", swarm::Ac5},   {"AC6", swarm::Ac6},
      {"AC7", swarm::Ac7},   {"AC8", swarm::Ac8},   {"AC9", swarm::Ac9},
      {"AC10", swarm::Ac10}, {"AC11", swarm::Ac11}, {"AC12", swarm::Ac12}};
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    swarm::Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%-4s %s  %s\n", name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
