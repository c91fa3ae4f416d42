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

// Round-level building blocks of the collaborative protocol: local gradient
// accumulation, the target-batch trigger, sample-weighted (optionally
// robust) aggregation, the per-round state machine, allowlist
// authentication and the contribution ledger.
//
// All reductions iterate contributions in ascending peer id so that results
// are bit-reproducible regardless of arrival order or slicing.

#ifndef SWARM_PROTOCOL_HPP_
#define SWARM_PROTOCOL_HPP_

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "swarm/desk_tasks.hpp"

namespace swarm::protocol {

struct PeerId {
  std::string value;

  auto operator<=>(const PeerId&) const = default;
};

struct PeerInfo {
  PeerId peer_id;
  std::string auth_token;
  double bandwidth_score = 1.0;
  double speed = 1.0;  // samples per simulated second
};

// Running sum of per-sample gradients at fixed parameters.
struct GradSum {
  std::vector<double> sum;
  std::uint64_t count = 0;

  explicit GradSum(std::size_t dim = 0) : sum(dim, 0.0) {}
  // Element-wise mean rounded to binary32; requires count > 0.
  std::vector<float> Mean() const;
};

// Adds the gradients of `microbatch` (sample indices) at `params` to `acc`,
// in index order. Throws kNonFiniteGradient.
void AccumulateLocal(const tasks::Task& task, std::span<const float> params,
                     std::span<const std::size_t> microbatch, GradSum& acc);
GradSum AccumulateLocal(const tasks::Task& task, std::span<const float> params,
                        std::span<const std::size_t> microbatch);

inline bool ShouldTrigger(std::uint64_t progress, std::uint64_t target) {
  return progress >= target;
}

enum class AggregationKind { kWeightedMean, kClippedMean, kTrimmedMean };

struct AggregationPolicy {
  AggregationKind kind = AggregationKind::kWeightedMean;
  // CLIPPED_MEAN: each gradient is rescaled to norm <= clip_norm * median norm.
  double clip_norm = 1.0;
  // TRIMMED_MEAN: values dropped per side and coordinate.
  std::size_t trim_k = 0;

  // Checks trim_k < floor(num_contributions / 2) and clip_norm > 0.
  void Validate(std::size_t num_contributions) const;
};

const char* AggregationKindName(AggregationKind kind);
AggregationKind ParseAggregationKind(const std::string& name);

struct Contribution {
  PeerId peer;
  std::uint64_t samples = 0;
  std::vector<float> grad;  // mean gradient over `samples`
};

// WEIGHTED_MEAN: g = sum_i s_i g_i / sum_i s_i.
// CLIPPED_MEAN:  as above after scaling g_i by min(1, tau / ||g_i||),
//                tau = clip_norm * median_i ||g_i||.
// TRIMMED_MEAN:  per coordinate, drop the trim_k smallest and largest values
//                (ties broken by peer id) and take the weighted mean of the
//                rest.
// `full_norms`, when given, replaces ||g_i|| for clipping; slice owners use it
// because they only hold a slice of every gradient. Throws kEmptyRound,
// kShapeMismatch, kInvalidPolicy.
std::vector<float> Aggregate(std::span<const Contribution> contributions,
                             const AggregationPolicy& policy,
                             std::span<const double> full_norms = {});

double L2Norm(std::span<const float> x);

enum class Phase { kAccumulating, kAggregating, kStepping, kDone, kAborted };
const char* PhaseName(Phase p);

struct PendingContribution {
  std::uint64_t samples = 0;
  bool received = false;
};

// Coordinator-side view of one round.
class RoundState {
 public:
  RoundState() = default;
  RoundState(std::uint64_t round_id, std::uint64_t target_batch, std::set<PeerId> live);

  std::uint64_t round_id() const { return round_id_; }
  std::uint64_t target_batch() const { return target_batch_; }
  Phase phase() const { return phase_; }
  const std::set<PeerId>& live() const { return live_; }
  const std::map<PeerId, std::uint64_t>& progress() const { return progress_; }
  const std::map<PeerId, PendingContribution>& contributions() const { return contributions_; }

  // Sum of reported samples over live peers.
  std::uint64_t Progress() const;
  // Records cumulative progress (ACCUMULATING only; counts never decrease).
  // Returns ShouldTrigger(Progress(), target).
  bool ReportProgress(const PeerId& peer, std::uint64_t samples);
  // ACCUMULATING -> AGGREGATING. Freezes the per-peer counts; peers with a
  // positive count become expected contributors.
  void BeginAggregation();
  void MarkReceived(const PeerId& peer);
  bool AllReceived() const;
  std::uint64_t ContributedSamples() const;
  // Phases only move forward; kAborted is terminal for the attempt.
  void Advance(Phase next);
  void AddLive(const PeerId& peer) { live_.insert(peer); }

  friend RoundState HandlePeerFailure(RoundState round, const PeerId& peer);

 private:
  std::uint64_t round_id_ = 0;
  std::uint64_t target_batch_ = 1;
  Phase phase_ = Phase::kAccumulating;
  std::set<PeerId> live_;
  std::map<PeerId, std::uint64_t> progress_;
  std::map<PeerId, PendingContribution> contributions_;
};

// Removes `peer` from the live set. Progress and contributions that were not
// fully received are dropped; completed uploads are kept. A round left with
// no live peers and no contributions is ABORTED.
RoundState HandlePeerFailure(RoundState round, const PeerId& peer);

class Allowlist {
 public:
  Allowlist() = default;
  explicit Allowlist(std::vector<std::string> tokens);
  // One token per line; blank lines and lines starting with '#' are ignored.
  static Allowlist Load(const std::string& path);

  bool Contains(const std::string& token) const { return tokens_.contains(token); }
  std::size_t size() const { return tokens_.size(); }

 private:
  std::unordered_set<std::string> tokens_;
};

struct JoinRequest {
  PeerId peer_id;
  std::string token;
};

enum class AuthResult { kAccept, kReject };
AuthResult Authenticate(const JoinRequest& request, const Allowlist& allowlist);

struct LedgerEntry {
  PeerId peer_id;
  std::uint64_t samples = 0;
  double wall_seconds = 0.0;
};

class Ledger {
 public:
  void Update(const PeerId& peer, std::uint64_t samples, double wall_seconds);
  // Sorted by wall_seconds descending, ties by peer id ascending.
  std::vector<LedgerEntry> Leaderboard(std::size_t n) const;
  const std::map<PeerId, LedgerEntry>& entries() const { return entries_; }

  std::string ToJson() const;
  static Ledger FromJson(const std::string& text);

 private:
  std::map<PeerId, LedgerEntry> entries_;
};

}  // namespace swarm::protocol

#endif  // SWARM_PROTOCOL_HPP_
