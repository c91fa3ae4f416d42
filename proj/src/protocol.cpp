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

#include "swarm/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "swarm/error.hpp"

namespace swarm::protocol {

std::vector<float> GradSum::Mean() const {
  if (count == 0) throw Error(ErrorCode::kEmptyRound, "mean of an empty accumulator");
  std::vector<float> out(sum.size());
  const double n = static_cast<double>(count);
  for (std::size_t i = 0; i < sum.size(); ++i) out[i] = static_cast<float>(sum[i] / n);
  return out;
}

void AccumulateLocal(const tasks::Task& task, std::span<const float> params,
                     std::span<const std::size_t> microbatch, GradSum& acc) {
  if (microbatch.empty()) throw Error(ErrorCode::kEmptyRound, "empty microbatch");
  if (params.size() != task.param_dim()) {
    throw Error(ErrorCode::kShapeMismatch, "params do not match task dimension");
  }
  if (acc.sum.empty() && acc.count == 0) acc.sum.assign(params.size(), 0.0);
  if (acc.sum.size() != params.size()) {
    throw Error(ErrorCode::kShapeMismatch, "accumulator does not match task dimension");
  }
  const auto w = tasks::ToDouble(params);
  for (std::size_t sample : microbatch) {
    task.AddGrad(w, sample, acc.sum);
  }
  for (double g : acc.sum) {
    if (!std::isfinite(g)) throw Error(ErrorCode::kNonFiniteGradient, "accumulated gradient not finite");
  }
  acc.count += microbatch.size();
}

GradSum AccumulateLocal(const tasks::Task& task, std::span<const float> params,
                        std::span<const std::size_t> microbatch) {
  GradSum acc(params.size());
  AccumulateLocal(task, params, microbatch, acc);
  return acc;
}

void AggregationPolicy::Validate(std::size_t num_contributions) const {
  if (kind == AggregationKind::kClippedMean && !(clip_norm > 0.0)) {
    throw Error(ErrorCode::kInvalidPolicy, "clip_norm must be positive");
  }
  if (kind == AggregationKind::kTrimmedMean && trim_k > 0 &&
      trim_k >= num_contributions / 2) {
    throw Error(ErrorCode::kInvalidPolicy,
                "trim_k " + std::to_string(trim_k) + " needs more than " +
                    std::to_string(2 * trim_k + 1) + " contributions, have " +
                    std::to_string(num_contributions));
  }
}

const char* AggregationKindName(AggregationKind kind) {
  switch (kind) {
    case AggregationKind::kWeightedMean: return "weighted_mean";
    case AggregationKind::kClippedMean: return "clipped_mean";
    case AggregationKind::kTrimmedMean: return "trimmed_mean";
  }
  return "?";
}

AggregationKind ParseAggregationKind(const std::string& name) {
  if (name == "weighted_mean") return AggregationKind::kWeightedMean;
  if (name == "clipped_mean") return AggregationKind::kClippedMean;
  if (name == "trimmed_mean") return AggregationKind::kTrimmedMean;
  throw Error(ErrorCode::kInvalidConfig, "unknown aggregation kind '" + name + "'");
}

double L2Norm(std::span<const float> x) {
  double s = 0.0;
  for (float v : x) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

namespace {

double Median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

std::vector<float> Aggregate(std::span<const Contribution> contributions,
                             const AggregationPolicy& policy,
                             std::span<const double> full_norms) {
  if (contributions.empty()) throw Error(ErrorCode::kEmptyRound, "no contributions");
  const std::size_t n = contributions.front().grad.size();
  for (const auto& c : contributions) {
    if (c.grad.size() != n) throw Error(ErrorCode::kShapeMismatch, "contribution lengths differ");
  }
  if (!full_norms.empty() && full_norms.size() != contributions.size()) {
    throw Error(ErrorCode::kShapeMismatch, "norm count does not match contributions");
  }
  policy.Validate(contributions.size());

  std::vector<std::size_t> order(contributions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return contributions[a].peer < contributions[b].peer;
  });

  double total = 0.0;
  for (const auto& c : contributions) total += static_cast<double>(c.samples);
  if (total == 0.0) throw Error(ErrorCode::kEmptyRound, "contributions carry zero samples");

  std::vector<float> out(n);
  switch (policy.kind) {
    case AggregationKind::kWeightedMean:
    case AggregationKind::kClippedMean: {
      std::vector<double> factor(contributions.size(), 1.0);
      if (policy.kind == AggregationKind::kClippedMean) {
        std::vector<double> norms(contributions.size());
        for (std::size_t i = 0; i < contributions.size(); ++i) {
          norms[i] = full_norms.empty() ? L2Norm(contributions[i].grad) : full_norms[i];
        }
        const double tau = policy.clip_norm * Median(norms);
        for (std::size_t i = 0; i < norms.size(); ++i) {
          if (norms[i] > tau) factor[i] = tau / norms[i];
        }
      }
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t i : order) {
          const auto& c = contributions[i];
          acc += static_cast<double>(c.samples) * (static_cast<double>(c.grad[j]) * factor[i]);
        }
        out[j] = static_cast<float>(acc / total);
      }
      break;
    }
    case AggregationKind::kTrimmedMean: {
      const std::size_t k = policy.trim_k;
      std::vector<std::pair<float, std::size_t>> column(contributions.size());
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t r = 0; r < order.size(); ++r) {
          column[r] = {contributions[order[r]].grad[j], r};
        }
        std::sort(column.begin(), column.end());
        double acc = 0.0;
        double weight = 0.0;
        for (std::size_t r = k; r + k < column.size(); ++r) {
          const auto& c = contributions[order[column[r].second]];
          acc += static_cast<double>(c.samples) * static_cast<double>(column[r].first);
          weight += static_cast<double>(c.samples);
        }
        if (weight == 0.0) throw Error(ErrorCode::kEmptyRound, "trimmed set carries zero samples");
        out[j] = static_cast<float>(acc / weight);
      }
      break;
    }
  }
  return out;
}

const char* PhaseName(Phase p) {
  switch (p) {
    case Phase::kAccumulating: return "ACCUMULATING";
    case Phase::kAggregating: return "AGGREGATING";
    case Phase::kStepping: return "STEPPING";
    case Phase::kDone: return "DONE";
    case Phase::kAborted: return "ABORTED";
  }
  return "?";
}

RoundState::RoundState(std::uint64_t round_id, std::uint64_t target_batch, std::set<PeerId> live)
    : round_id_(round_id), target_batch_(target_batch), live_(std::move(live)) {
  if (target_batch_ == 0) throw Error(ErrorCode::kInvalidConfig, "target batch must be positive");
  if (live_.empty()) phase_ = Phase::kAborted;
}

std::uint64_t RoundState::Progress() const {
  std::uint64_t total = 0;
  for (const auto& [peer, s] : progress_) {
    if (live_.contains(peer)) total += s;
  }
  return total;
}

bool RoundState::ReportProgress(const PeerId& peer, std::uint64_t samples) {
  if (phase_ != Phase::kAccumulating || !live_.contains(peer)) return false;
  auto& s = progress_[peer];
  s = std::max(s, samples);
  return ShouldTrigger(Progress(), target_batch_);
}

void RoundState::BeginAggregation() {
  Advance(Phase::kAggregating);
  contributions_.clear();
  for (const auto& [peer, s] : progress_) {
    if (live_.contains(peer) && s > 0) contributions_[peer] = {s, false};
  }
}

void RoundState::MarkReceived(const PeerId& peer) {
  auto it = contributions_.find(peer);
  if (it != contributions_.end()) it->second.received = true;
}

bool RoundState::AllReceived() const {
  return std::all_of(contributions_.begin(), contributions_.end(),
                     [](const auto& kv) { return kv.second.received; });
}

std::uint64_t RoundState::ContributedSamples() const {
  std::uint64_t total = 0;
  for (const auto& [peer, c] : contributions_) total += c.samples;
  return total;
}

void RoundState::Advance(Phase next) {
  if (phase_ == Phase::kAborted || static_cast<int>(next) < static_cast<int>(phase_)) {
    throw Error(ErrorCode::kInvalidConfig, std::string("illegal phase transition ") +
                                               PhaseName(phase_) + " -> " + PhaseName(next));
  }
  phase_ = next;
}

RoundState HandlePeerFailure(RoundState round, const PeerId& peer) {
  round.live_.erase(peer);
  switch (round.phase_) {
    case Phase::kAccumulating:
      round.progress_.erase(peer);
      break;
    case Phase::kAggregating:
    case Phase::kStepping: {
      auto it = round.contributions_.find(peer);
      if (it != round.contributions_.end() && !it->second.received) {
        round.contributions_.erase(it);
      }
      break;
    }
    case Phase::kDone:
    case Phase::kAborted:
      return round;
  }
  if (round.live_.empty() && round.contributions_.empty()) round.phase_ = Phase::kAborted;
  return round;
}

Allowlist::Allowlist(std::vector<std::string> tokens)
    : tokens_(tokens.begin(), tokens.end()) {}

Allowlist Allowlist::Load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open allowlist " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    const auto begin = line.find_first_not_of(" \t\r");
    if (begin == std::string::npos || line[begin] == '#') continue;
    const auto end = line.find_last_not_of(" \t\r");
    tokens.push_back(line.substr(begin, end - begin + 1));
  }
  return Allowlist(std::move(tokens));
}

AuthResult Authenticate(const JoinRequest& request, const Allowlist& allowlist) {
  return !request.token.empty() && allowlist.Contains(request.token) ? AuthResult::kAccept
                                                                     : AuthResult::kReject;
}

void Ledger::Update(const PeerId& peer, std::uint64_t samples, double wall_seconds) {
  if (!(wall_seconds >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "negative wall time");
  auto& e = entries_[peer];
  e.peer_id = peer;
  e.samples += samples;
  e.wall_seconds += wall_seconds;
}

std::vector<LedgerEntry> Ledger::Leaderboard(std::size_t n) const {
  std::vector<LedgerEntry> out;
  out.reserve(entries_.size());
  for (const auto& [peer, e] : entries_) out.push_back(e);
  std::stable_sort(out.begin(), out.end(), [](const LedgerEntry& a, const LedgerEntry& b) {
    if (a.wall_seconds != b.wall_seconds) return a.wall_seconds > b.wall_seconds;
    return a.peer_id < b.peer_id;
  });
  if (out.size() > n) out.resize(n);
  return out;
}

std::string Ledger::ToJson() const {
  nlohmann::json peers = nlohmann::json::array();
  for (const auto& [peer, e] : entries_) {
    peers.push_back({{"peer_id", peer.value}, {"samples", e.samples}, {"wall_seconds", e.wall_seconds}});
  }
  return nlohmann::json{{"peers", peers}}.dump(2) + "\n";
}

Ledger Ledger::FromJson(const std::string& text) {
  Ledger ledger;
  try {
    const auto doc = nlohmann::json::parse(text);
    for (const auto& p : doc.at("peers")) {
      ledger.Update(PeerId{p.at("peer_id").get<std::string>()}, p.at("samples").get<std::uint64_t>(),
                    p.at("wall_seconds").get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("ledger file: ") + e.what());
  }
  return ledger;
}

}  // namespace swarm::protocol
