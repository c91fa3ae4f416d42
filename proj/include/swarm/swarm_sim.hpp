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

// Actor-level simulation of a collaborative training run: one coordinator
// (membership, round triggering, ledger, leader copy of the parameters) and
// any number of peers exchanging protocol messages over netsim::Network.
//
// Round r, per peer: accumulate microbatches, report PROGRESS after each;
// on TRIGGER contribute the gradient mean for the acknowledged sample count;
// apply the identical aggregate with the local optimizer; report STEP_DONE
// with the parameter hash.
//
// Aggregation modes:
//   star         peers send CONTRIB to the coordinator, which aggregates and
//                broadcasts one GATHER.
//   partitioned  every member owns a contiguous gradient slice sized by its
//                bandwidth score; contributors send SLICEs to owners, owners
//                broadcast their aggregated slice (GATHER), and the
//                coordinator COMMITs once it holds every slice.

#ifndef SWARM_SWARM_SIM_HPP_
#define SWARM_SWARM_SIM_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "swarm/desk_tasks.hpp"
#include "swarm/net_sim.hpp"
#include "swarm/optimizers.hpp"
#include "swarm/protocol.hpp"
#include "swarm/tensor_codec.hpp"

namespace swarm::sim {

enum class AggregationMode { kStar, kPartitioned };

struct PeerSpec {
  std::string id;
  std::string token;
  double speed = 100.0;  // samples per simulated second
  netsim::LinkSpec link;
  // 0 means "derive from uplink" (uplink in Mbit/s).
  double bandwidth_score = 0.0;
  std::uint64_t microbatch = 16;
  // Time of the first JOIN; nullopt for peers that only join via churn.
  std::optional<double> join_time = 0.0;
  // Sends unsolicited traffic after joining; used for authentication tests.
  bool rogue = false;
  // Multiplies the contributed gradient (1 for honest peers).
  double gradient_scale = 1.0;

  double EffectiveBandwidthScore() const;
};

enum class ChurnKind { kJoin, kCrash, kLeave };

struct ChurnEvent {
  ChurnKind kind = ChurnKind::kCrash;
  std::string peer;
  // Exactly one of `time` (absolute simulated seconds) or `round` (fires
  // when the coordinator first starts that round) is set; `offset` is added.
  std::optional<double> time;
  std::optional<std::uint64_t> round;
  double offset = 0.0;
};

struct Scenario {
  std::string name = "scenario";
  std::uint64_t seed = 0;
  tasks::TaskSpec task;
  std::uint64_t rounds = 10;
  std::uint64_t target_batch = 256;
  protocol::AggregationPolicy policy;
  AggregationMode mode = AggregationMode::kStar;
  codec::CodecPolicy codec;
  optim::OptimConfig optimizer = optim::OptimConfig::Adam();
  optim::ScheduleConfig schedule;
  netsim::NetConfig network;
  netsim::LinkSpec coordinator_link{1e9, 1e9};
  std::vector<PeerSpec> peers;
  std::vector<ChurnEvent> churn;
  std::vector<std::string> allowlist;
  double start_time = 1.0;
  double failure_detect_delay = 0.5;
  double max_sim_seconds = 1e7;
  double rogue_interval = 1.0;

  void Validate() const;
  std::uint64_t max_microbatch() const;
};

// Scenario files are JSON; see README for the schema. Throws kInvalidConfig.
Scenario ParseScenario(const std::string& text);
Scenario LoadScenario(const std::string& path);

struct RoundMetrics {
  std::uint64_t round = 0;
  double loss = 0.0;
  std::uint32_t live_peers = 0;
  std::uint64_t bytes_total = 0;
  double sim_seconds = 0.0;
  std::uint32_t attempts = 0;
  std::uint64_t contributed_samples = 0;
  std::map<std::string, std::uint64_t> samples_by_peer;
  std::map<std::string, std::uint64_t> peer_hashes;
  std::uint64_t leader_hash = 0;
  std::vector<std::string> members;

  bool HashesConsistent() const;
};

struct AggregateRecord {
  std::uint64_t round = 0;
  std::uint64_t slice_begin = 0;
  std::vector<protocol::Contribution> contributions;
  std::vector<float> aggregate;
};

struct SimOptions {
  bool trace = true;
  bool record_params = false;
  std::function<void(const AggregateRecord&)> on_aggregate;
};

struct SimResult {
  bool completed = false;
  std::string abort_reason;
  std::vector<RoundMetrics> rounds;
  std::string trace;
  protocol::Ledger ledger;
  std::vector<float> final_params;
  std::vector<std::vector<float>> param_history;
  std::map<std::string, std::uint64_t> bytes_sent_by_node;
  std::uint64_t total_bytes_sent = 0;
  std::uint64_t total_bytes_received = 0;
  double sim_seconds = 0.0;
};

SimResult RunSimulation(const Scenario& scenario, const SimOptions& options = {});

// CSV with header `round,loss,live_peers,bytes_total,sim_seconds`.
std::string MetricsCsv(const SimResult& result);

// Contiguous [begin, end) ranges over n elements, sized proportionally to
// `scores` via rounded-down cumulative shares.
std::vector<std::pair<std::uint64_t, std::uint64_t>> SliceAssignment(
    std::uint64_t n, std::span<const double> scores);

std::uint64_t ParamHash(std::span<const float> params);

// The k-th sample index a peer draws in a round. Every peer has an
// independent stream per round.
class SampleStream {
 public:
  SampleStream(std::uint64_t seed, const std::string& peer, std::uint64_t round,
               std::size_t num_samples);
  std::size_t Next() { return static_cast<std::size_t>(rng_.below(n_)); }

 private:
  SplitMix64 rng_;
  std::size_t n_;
};

// Trim depth usable with `num_contributions`: min(trim_k, floor(n/2) - 1),
// floored at zero.
std::size_t EffectiveTrim(std::size_t trim_k, std::size_t num_contributions);

// Learning rate the protocol applies when completing round `round`.
double RoundLr(std::uint64_t round, const optim::ScheduleConfig& schedule);

// Replays a finished run on a single node: for every round the same peers'
// first s_i samples are evaluated at the current parameters, aggregated with
// the scenario policy and stepped, without any codec or network. Returns the
// parameters after each round.
std::vector<std::vector<float>> ReplaySingleNode(const Scenario& scenario,
                                                 const SimResult& result);

}  // namespace swarm::sim

#endif  // SWARM_SWARM_SIM_HPP_
