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

#include "swarm/swarm_sim.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "test_support.hpp"

#ifndef SWARM_SOURCE_DIR
#define SWARM_SOURCE_DIR "."
#endif

namespace swarm::sim {
namespace {

using swarm::testing::ErrorOf;

Scenario Base(std::size_t peers, std::uint64_t rounds) {
  Scenario sc;
  sc.name = "test";
  sc.seed = 3;
  sc.rounds = rounds;
  sc.target_batch = 256;
  sc.task = {"logreg", 20, 4096, 7};
  sc.codec.lossless = true;
  sc.schedule = {rounds, 0.1, 0.05, 0.0};
  for (std::size_t i = 0; i < peers; ++i) {
    PeerSpec p;
    p.id = "peer-" + std::to_string(i);
    p.token = "tok-" + std::to_string(i);
    p.speed = 400;
    p.microbatch = 16;
    p.link = {20e6, 100e6};
    sc.peers.push_back(p);
  }
  return sc;
}

double MaxDivergence(const SimResult& r, const std::vector<std::vector<float>>& base) {
  double d = 0;
  for (std::size_t k = 0; k < base.size(); ++k) {
    for (std::size_t j = 0; j < base[k].size(); ++j) {
      d = std::max(d, std::abs(static_cast<double>(r.param_history[k][j]) - base[k][j]));
    }
  }
  return d;
}

SimOptions Recording() {
  SimOptions o;
  o.record_params = true;
  return o;
}

TEST(SliceAssignment, ProportionalContiguousCover) {
  const std::vector<double> scores{1, 2, 1};
  const auto s = SliceAssignment(100, scores);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].first, 0u);
  EXPECT_EQ(s[2].second, 100u);
  for (std::size_t i = 1; i < 3; ++i) EXPECT_EQ(s[i].first, s[i - 1].second);
  EXPECT_EQ(s[0].second - s[0].first, 25u);
  EXPECT_EQ(s[1].second - s[1].first, 50u);
  // More owners than elements still covers the range.
  const std::vector<double> many(10, 1.0);
  const auto t = SliceAssignment(3, many);
  std::uint64_t covered = 0;
  for (const auto& [b, e] : t) covered += e - b;
  EXPECT_EQ(covered, 3u);
}

TEST(Helpers, EffectiveTrimAndRoundLr) {
  EXPECT_EQ(EffectiveTrim(1, 5), 1u);
  EXPECT_EQ(EffectiveTrim(1, 3), 0u);
  EXPECT_EQ(EffectiveTrim(2, 4), 1u);
  EXPECT_EQ(EffectiveTrim(3, 1), 0u);
  const optim::ScheduleConfig s{10, 0.1, 1.0, 0.0};
  EXPECT_EQ(RoundLr(0, s), 1.0);
  EXPECT_EQ(RoundLr(9, s), 0.0);
  EXPECT_EQ(RoundLr(50, s), 0.0);
}

TEST(Scenario, ParseErrors) {
  EXPECT_EQ(ErrorOf([] { ParseScenario("{"); }), ErrorCode::kInvalidConfig);
  EXPECT_EQ(ErrorOf([] { ParseScenario("[]"); }), ErrorCode::kInvalidConfig);
  EXPECT_EQ(ErrorOf([] { ParseScenario(R"({"rounds": 3, "peers": []})"); }),
            ErrorCode::kInvalidConfig);
  const char* dup = R"({"peers": [{"id": "a", "token": "x"}, {"id": "a", "token": "y"}]})";
  EXPECT_EQ(ErrorOf([&] { ParseScenario(dup); }), ErrorCode::kInvalidConfig);
  const char* kind = R"({"aggregation": {"kind": "median"}, "peers": [{"id": "a", "token": "x"}]})";
  EXPECT_EQ(ErrorOf([&] { ParseScenario(kind); }), ErrorCode::kInvalidConfig);
  const char* churn =
      R"({"peers": [{"id": "a", "token": "x"}], "churn": [{"event": "crash", "peer": "zz", "at": 1}]})";
  EXPECT_EQ(ErrorOf([&] { ParseScenario(churn); }), ErrorCode::kInvalidConfig);
  const char* drop = R"({"network": {"drop_prob": 1.0}, "peers": [{"id": "a", "token": "x"}]})";
  EXPECT_EQ(ErrorOf([&] { ParseScenario(drop); }), ErrorCode::kInvalidConfig);
}

TEST(Scenario, ParsesBundledFiles) {
  const auto h = LoadScenario(SWARM_SOURCE_DIR "/scenarios/homogeneous4.scenario");
  EXPECT_EQ(h.peers.size(), 4u);
  EXPECT_EQ(h.rounds, 200u);
  EXPECT_TRUE(h.codec.lossless);
  const auto c = LoadScenario(SWARM_SOURCE_DIR "/scenarios/churn5.scenario");
  EXPECT_EQ(c.mode, AggregationMode::kPartitioned);
  EXPECT_EQ(c.churn.size(), 3u);
  EXPECT_EQ(c.optimizer.algorithm, optim::Algorithm::kLamb);
  EXPECT_TRUE(c.allowlist.empty());  // derived from the peer tokens
}

TEST(Simulation, StarLosslessMatchesSingleNodeBitExact) {
  auto sc = Base(4, 40);
  const auto r = RunSimulation(sc, Recording());
  ASSERT_TRUE(r.completed) << r.abort_reason;
  ASSERT_EQ(r.rounds.size(), 40u);
  EXPECT_EQ(MaxDivergence(r, ReplaySingleNode(sc, r)), 0.0);
  for (const auto& m : r.rounds) {
    EXPECT_TRUE(m.HashesConsistent()) << m.round;
    EXPECT_EQ(m.live_peers, 4u);
    EXPECT_GE(m.contributed_samples, sc.target_batch);
    EXPECT_LT(m.contributed_samples, sc.target_batch + sc.max_microbatch());
  }
  EXPECT_LT(r.rounds.back().loss, r.rounds.front().loss);
}

TEST(Simulation, PartitionedLosslessMatchesSingleNodeBitExact) {
  auto sc = Base(5, 30);
  sc.mode = AggregationMode::kPartitioned;
  sc.peers[1].link.uplink_bps = 5e6;
  sc.peers[3].link.uplink_bps = 60e6;
  sc.network.drop_prob = 0.05;
  sc.network.max_retries = 10;
  const auto r = RunSimulation(sc, Recording());
  ASSERT_TRUE(r.completed) << r.abort_reason;
  EXPECT_EQ(MaxDivergence(r, ReplaySingleNode(sc, r)), 0.0);
  for (const auto& m : r.rounds) EXPECT_TRUE(m.HashesConsistent()) << m.round;
}

TEST(Simulation, SinglePeerIsLocalTraining) {
  auto sc = Base(1, 20);
  const auto r = RunSimulation(sc, Recording());
  ASSERT_TRUE(r.completed);
  EXPECT_EQ(MaxDivergence(r, ReplaySingleNode(sc, r)), 0.0);
}

TEST(Simulation, Q8DivergenceBounded) {
  auto sc = Base(4, 30);
  sc.codec.lossless = false;
  sc.codec.q8_threshold = 1;
  const auto r = RunSimulation(sc, Recording());
  ASSERT_TRUE(r.completed);
  const double d = MaxDivergence(r, ReplaySingleNode(sc, r));
  EXPECT_GT(d, 0.0);
  EXPECT_LT(d, 0.05);
}

TEST(Simulation, HeterogeneousContributionsTrackSpeed) {
  auto sc = Base(4, 30);
  sc.target_batch = 1024;
  const double speeds[] = {100, 200, 400, 800};
  for (int i = 0; i < 4; ++i) {
    sc.peers[i].speed = speeds[i];
    sc.peers[i].microbatch = 8;
  }
  const auto r = RunSimulation(sc);
  ASSERT_TRUE(r.completed);
  std::map<std::string, double> totals;
  for (const auto& m : r.rounds) {
    EXPECT_GE(m.contributed_samples, sc.target_batch);
    EXPECT_LT(m.contributed_samples, sc.target_batch + 8);
    for (const auto& [p, s] : m.samples_by_peer) totals[p] += static_cast<double>(s);
  }
  double all = 0;
  for (const auto& [p, s] : totals) all += s;
  for (int i = 0; i < 4; ++i) {
    const double expected = all * speeds[i] / 1500.0;
    EXPECT_NEAR(totals[sc.peers[i].id], expected, 0.3 * expected) << i;
  }
}

TEST(Simulation, CrashMidAggregationCompletesFromSurvivors) {
  auto sc = Base(5, 12);
  sc.mode = AggregationMode::kPartitioned;
  ChurnEvent a{ChurnKind::kCrash, "peer-1", std::nullopt, 5, 0.7};
  ChurnEvent b{ChurnKind::kCrash, "peer-3", std::nullopt, 5, 0.7};
  sc.churn = {a, b};
  const auto r = RunSimulation(sc, Recording());
  ASSERT_TRUE(r.completed) << r.abort_reason;
  EXPECT_EQ(MaxDivergence(r, ReplaySingleNode(sc, r)), 0.0);
  EXPECT_EQ(r.rounds.back().live_peers, 3u);
  for (const auto& m : r.rounds) EXPECT_TRUE(m.HashesConsistent()) << m.round;
}

TEST(Simulation, BundledChurnScheduleReflectedInLivePeers) {
  const auto sc = LoadScenario(SWARM_SOURCE_DIR "/scenarios/churn5.scenario");
  const auto r = RunSimulation(sc);
  ASSERT_TRUE(r.completed) << r.abort_reason;
  ASSERT_EQ(r.rounds.size(), 100u);
  for (const auto& m : r.rounds) {
    const std::uint32_t want = m.round < 50 ? 5 : m.round <= 70 ? 3 : 4;
    EXPECT_EQ(m.live_peers, want) << m.round;
    EXPECT_TRUE(m.HashesConsistent()) << m.round;
    if (m.round >= 71) EXPECT_TRUE(m.peer_hashes.contains("peer-2")) << m.round;
  }
}

TEST(Simulation, LivenessUnderRandomChurn) {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    SplitMix64 rng(seed);
    auto sc = Base(4, 25);
    sc.seed = seed;
    sc.network.seed = seed;
    sc.network.drop_prob = 0.02;
    sc.mode = seed % 2 ? AggregationMode::kPartitioned : AggregationMode::kStar;
    // peer-0 survives; others crash, leave or rejoin at random times.
    for (int i = 1; i < 4; ++i) {
      const double t = 1.0 + rng.uniform() * 8.0;
      const auto kind = rng.below(2) ? ChurnKind::kCrash : ChurnKind::kLeave;
      sc.churn.push_back({kind, sc.peers[i].id, t, std::nullopt, 0.0});
      if (rng.below(2)) {
        sc.churn.push_back({ChurnKind::kJoin, sc.peers[i].id, t + 1 + rng.uniform() * 5,
                            std::nullopt, 0.0});
      }
    }
    const auto r = RunSimulation(sc);
    ASSERT_TRUE(r.completed) << "seed " << seed << ": " << r.abort_reason;
    EXPECT_EQ(r.rounds.size(), 25u);
    for (const auto& m : r.rounds) EXPECT_TRUE(m.HashesConsistent()) << seed << " " << m.round;
  }
}

TEST(Simulation, AllPeersLostAborts) {
  auto sc = Base(2, 50);
  sc.churn = {{ChurnKind::kCrash, "peer-0", std::nullopt, 3, 0.0},
              {ChurnKind::kCrash, "peer-1", std::nullopt, 3, 0.0}};
  const auto r = RunSimulation(sc);
  EXPECT_FALSE(r.completed);
  EXPECT_FALSE(r.abort_reason.empty());
  EXPECT_EQ(r.rounds.size(), 3u);
}

TEST(Simulation, RejectedPeerDoesNotChangeTraining) {
  auto clean = Base(4, 15);
  auto with_rogue = clean;
  PeerSpec rogue;
  rogue.id = "mallory";
  rogue.token = "forged";
  rogue.rogue = true;
  rogue.speed = 1000;
  with_rogue.peers.push_back(rogue);
  for (const auto& p : clean.peers) with_rogue.allowlist.push_back(p.token);
  const auto a = RunSimulation(clean);
  const auto b = RunSimulation(with_rogue);
  ASSERT_TRUE(a.completed);
  ASSERT_TRUE(b.completed);
  EXPECT_EQ(a.final_params, b.final_params);
  EXPECT_NE(b.trace.find("reject mallory"), std::string::npos);
  for (const auto& m : b.rounds) EXPECT_FALSE(m.peer_hashes.contains("mallory"));
}

TEST(Simulation, TrimmedMeanContainsAdversary) {
  auto sc = Base(5, 20);
  sc.policy = {protocol::AggregationKind::kTrimmedMean, 1.0, 1};
  sc.peers[4].gradient_scale = 1000.0;
  std::size_t checked = 0;
  SimOptions opts;
  opts.on_aggregate = [&](const AggregateRecord& rec) {
    for (std::size_t j = 0; j < rec.aggregate.size(); ++j) {
      float lo = 1e30f, hi = -1e30f;
      for (const auto& c : rec.contributions) {
        if (c.peer.value == "peer-4") continue;
        lo = std::min(lo, c.grad[j]);
        hi = std::max(hi, c.grad[j]);
      }
      EXPECT_GE(rec.aggregate[j], lo);
      EXPECT_LE(rec.aggregate[j], hi);
      ++checked;
    }
  };
  const auto r = RunSimulation(sc, opts);
  ASSERT_TRUE(r.completed);
  EXPECT_EQ(checked, 20u * 20u);
}

TEST(Simulation, DeterministicTraceAndCsv) {
  auto sc = Base(3, 15);
  sc.mode = AggregationMode::kPartitioned;
  sc.network.drop_prob = 0.1;
  sc.churn = {{ChurnKind::kCrash, "peer-2", 4.0, std::nullopt, 0.0},
              {ChurnKind::kJoin, "peer-2", 7.0, std::nullopt, 0.0}};
  const auto a = RunSimulation(sc);
  const auto b = RunSimulation(sc);
  ASSERT_TRUE(a.completed);
  EXPECT_EQ(MetricsCsv(a), MetricsCsv(b));
  EXPECT_EQ(a.trace, b.trace);
  EXPECT_EQ(MetricsCsv(a).substr(0, 42), "round,loss,live_peers,bytes_total,sim_seco");
}

TEST(Simulation, TraceTimesNonDecreasingAndBytesConserved) {
  auto sc = Base(4, 10);
  sc.network.drop_prob = 0.2;
  sc.network.max_retries = 10;
  const auto r = RunSimulation(sc);
  ASSERT_TRUE(r.completed);
  EXPECT_LE(r.total_bytes_received, r.total_bytes_sent);
  double prev = 0;
  std::size_t pos = 0;
  while (pos < r.trace.size()) {
    const double t = std::strtod(r.trace.c_str() + pos, nullptr);
    ASSERT_GE(t, prev);
    prev = t;
    pos = r.trace.find('\n', pos) + 1;
    if (pos == 0) break;
  }
}

TEST(Simulation, LedgerCreditsContributors) {
  auto sc = Base(3, 10);
  sc.peers[0].speed = 800;
  const auto r = RunSimulation(sc);
  ASSERT_TRUE(r.completed);
  std::uint64_t credited = 0;
  for (const auto& [p, e] : r.ledger.entries()) credited += e.samples;
  std::uint64_t contributed = 0;
  for (const auto& m : r.rounds) contributed += m.contributed_samples;
  EXPECT_EQ(credited, contributed);
  const auto& e = r.ledger.entries();
  EXPECT_GT(e.at(protocol::PeerId{"peer-0"}).samples, e.at(protocol::PeerId{"peer-1"}).samples);
  EXPECT_GT(e.at(protocol::PeerId{"peer-0"}).wall_seconds, 0.0);
}

}  // namespace
}  // namespace swarm::sim
