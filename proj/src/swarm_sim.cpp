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

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "swarm/error.hpp"
#include "swarm/messages.hpp"
#include "swarm/random.hpp"
#include "swarm/wire.hpp"

namespace swarm::sim {

using netsim::NodeId;
using protocol::Bytes;
using protocol::Message;
using protocol::PeerId;
using protocol::TriggerEntry;

namespace {

constexpr char kCoordinatorName[] = "coordinator";

std::uint64_t NameHash(const std::string& s) {
  return Fnv1a64({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

codec::QuantizedChunk EncodeAs(codec::Scheme scheme, std::span<const float> x,
                               const codec::CodecPolicy& policy) {
  switch (scheme) {
    case codec::Scheme::kQ8Blockwise:
      return codec::QuantizeQ8(x, policy.block_size);
    case codec::Scheme::kF16:
      try {
        return codec::EncodeF16(x);
      } catch (const Error& e) {
        // Out of half range: ship the chunk at full precision instead.
        if (e.code() != ErrorCode::kOverflowToInfinity) throw;
        return codec::EncodeF32(x);
      }
    case codec::Scheme::kF32:
      return codec::EncodeF32(x);
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown scheme");
}

std::optional<std::vector<float>> DecodeChunk(const Bytes& bytes, std::size_t expected) {
  try {
    std::size_t consumed = 0;
    auto chunk = codec::Deserialize(bytes, &consumed);
    if (consumed != bytes.size() || chunk.num_elements != expected) return std::nullopt;
    return codec::Decode(chunk);
  } catch (const Error&) {
    return std::nullopt;
  }
}

protocol::AggregationPolicy EffectivePolicy(const protocol::AggregationPolicy& p,
                                            std::size_t n) {
  protocol::AggregationPolicy out = p;
  if (out.kind == protocol::AggregationKind::kTrimmedMean) {
    out.trim_k = EffectiveTrim(p.trim_k, n);
  }
  return out;
}

std::string Fmt(const char* fmt, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

class Simulation;

class PeerActor {
 public:
  enum class Status { kOffline, kJoining, kMember, kDown };

  PeerActor(Simulation* sim, const PeerSpec& spec, NodeId node)
      : spec(spec), node(node), sim_(sim) {}

  void Join();
  void Crash();
  void Leave();
  void OnMessage(NodeId from, const Message& m);
  void OnLinkFailure(NodeId other);

  const PeerSpec& spec;
  const NodeId node;

 private:
  struct SliceIn {
    std::uint64_t samples;
    double norm;
    std::vector<float> values;
  };

  void Reset();
  void BeginRound(std::uint64_t round);
  void ScheduleMicrobatch();
  void OnJoinAck(const protocol::JoinAckMsg& m);
  void OnTrigger(const protocol::TriggerMsg& m);
  void OnSlice(NodeId from, const protocol::SliceMsg& m);
  void OnGather(NodeId from, const protocol::GatherMsg& m);
  void OnCommit(const protocol::CommitMsg& m);
  void Contribute();
  void MaybeStep();
  // Returns 1 to process now, 0 to drop, and buffers (returning -1) messages
  // for a later round or attempt.
  int Admissible(std::uint64_t round, std::uint32_t attempt, NodeId from, const Message& m);
  void Replay(std::uint64_t round);
  const TriggerEntry* Entry(const std::string& id) const;
  void RogueTick(std::uint32_t remaining);

  Simulation* sim_;
  Status status_ = Status::kOffline;
  std::uint64_t gen_ = 0;
  std::vector<float> params_;
  std::optional<optim::Optimizer> opt_;
  std::uint64_t round_ = 0;
  bool accumulating_ = false;
  std::optional<SampleStream> stream_;
  protocol::GradSum acc_;
  std::uint64_t samples_ = 0;
  std::map<std::uint64_t, std::vector<double>> snapshots_;
  std::optional<protocol::TriggerMsg> trigger_;
  std::uint32_t last_attempt_ = 0;
  std::map<std::string, SliceIn> slices_in_;
  bool owner_sent_ = false;
  std::map<std::uint64_t, std::vector<float>> gathers_;
  bool committed_ = false;
  bool stepped_ = false;
  std::map<std::uint64_t, std::vector<std::pair<NodeId, Message>>> buffered_;
};

class Coordinator {
 public:
  Coordinator(Simulation* sim, NodeId node);

  void Start();
  void OnMessage(NodeId from, const Message& m);
  void OnLinkFailure(NodeId other);
  void DetectFailure(const std::string& peer, double crash_time);

  const std::vector<float>& params() const { return params_; }
  bool idle() const { return idle_; }

  const NodeId node;

 private:
  struct Member {
    NodeId node;
    double score;
    double admitted_at;
  };
  struct Pending {
    std::string id;
    NodeId node;
    double score;
  };

  std::optional<std::string> MemberOf(NodeId from) const;
  void Broadcast(const Message& m);
  void StartRound(std::uint64_t round);
  void OnJoin(NodeId from, const protocol::JoinMsg& m);
  void OnProgress(const std::string& id, const protocol::ProgressMsg& m);
  void OnContrib(const std::string& id, const protocol::ContribMsg& m);
  void OnGather(const std::string& id, const protocol::GatherMsg& m);
  void OnStepDone(const std::string& id, const protocol::StepDoneMsg& m);
  void RemoveMember(const std::string& id, const char* why);
  void Trigger();
  void Restart();
  void FinishStar();
  void LeaderStep(const std::vector<float>& agg);
  void MaybeComplete();
  void CompleteRound();
  void Abort(const std::string& why);

  Simulation* sim_;
  bool started_ = false;
  bool idle_ = true;
  std::map<std::string, Member> members_;
  std::vector<Pending> pending_;
  std::vector<float> params_;
  optim::Optimizer opt_;
  protocol::RoundState rs_;
  std::uint64_t round_ = 0;
  std::uint32_t attempt_ = 0;
  std::uint32_t triggers_ = 0;
  std::set<std::uint64_t> churn_fired_;
  std::vector<TriggerEntry> entries_;
  std::map<std::string, protocol::Contribution> contribs_;
  std::map<std::uint64_t, Bytes> gather_chunks_;
  std::map<std::uint64_t, std::vector<float>> gathers_;
  bool committed_ = false;
  bool leader_stepped_ = false;
  std::uint64_t leader_hash_ = 0;
  std::set<std::string> awaiting_;
  std::map<std::string, std::uint64_t> hashes_;
  std::vector<std::pair<std::string, protocol::ProgressMsg>> early_progress_;
};

class Simulation {
 public:
  Simulation(const Scenario& sc, const SimOptions& opt)
      : sc(sc),
        opt(opt),
        task(tasks::MakeTask(sc.task)),
        layers(task->Layers()),
        trace(opt.trace),
        net(sc.network, &queue, &trace) {}

  SimResult Run();

  void Log(const std::string& text) { trace.Add(queue.now(), text); }

  void Send(NodeId from, NodeId to, const Message& m) {
    net.Send(from, to, protocol::EncodeMessage(m), protocol::MsgTypeName(protocol::TypeOf(m)));
  }

  void OnRoundStart(std::uint64_t round);
  void Apply(const ChurnEvent& ev);
  PeerActor* Peer(const std::string& id) {
    auto it = by_id.find(id);
    return it == by_id.end() ? nullptr : it->second;
  }

  const Scenario& sc;
  const SimOptions& opt;
  std::unique_ptr<tasks::Task> task;
  std::vector<optim::LayerSlice> layers;
  netsim::EventQueue queue;
  netsim::Trace trace;
  netsim::Network net;
  std::unique_ptr<Coordinator> coord;
  std::vector<std::unique_ptr<PeerActor>> peers;
  std::map<std::string, PeerActor*> by_id;
  protocol::Allowlist allowlist;
  SimResult result;
  bool done = false;
};

// ---------------------------------------------------------------- peer

void PeerActor::Reset() {
  ++gen_;
  accumulating_ = false;
  stream_.reset();
  acc_ = protocol::GradSum();
  samples_ = 0;
  snapshots_.clear();
  trigger_.reset();
  last_attempt_ = 0;
  slices_in_.clear();
  owner_sent_ = false;
  gathers_.clear();
  committed_ = false;
  stepped_ = false;
}

void PeerActor::Join() {
  if (status_ == Status::kJoining || status_ == Status::kMember) return;
  if (!sim_->net.IsUp(node)) sim_->net.SetUp(node, true);
  Reset();
  buffered_.clear();
  params_.clear();
  opt_.reset();
  status_ = Status::kJoining;
  sim_->Log("join-request " + spec.id);
  sim_->Send(node, sim_->coord->node,
             protocol::JoinMsg{spec.id, spec.token, spec.EffectiveBandwidthScore()});
  if (spec.rogue) {
    const std::uint64_t g = gen_;
    sim_->queue.Schedule(sim_->queue.now() + sim_->sc.rogue_interval, [this, g] {
      if (gen_ == g) RogueTick(20);
    });
  }
}

void PeerActor::RogueTick(std::uint32_t remaining) {
  if (sim_->done || remaining == 0 || !sim_->net.IsUp(node)) return;
  // Unsolicited traffic: an inflated progress report and a poisoned
  // gradient, aimed at the coordinator and at every other peer.
  const std::size_t n = sim_->task->param_dim();
  std::vector<float> junk(n, 1e3f);
  auto chunk = codec::Serialize(codec::EncodeF32(junk));
  sim_->Send(node, sim_->coord->node, protocol::ProgressMsg{round_, 1u << 20});
  sim_->Send(node, sim_->coord->node, protocol::ContribMsg{round_, 1, 1u << 20, chunk});
  for (const auto& p : sim_->peers) {
    if (p.get() == this) continue;
    sim_->Send(node, p->node, protocol::SliceMsg{round_, 1, 1u << 20, 1.0, 0, chunk});
  }
  ++round_;
  const std::uint64_t g = gen_;
  sim_->queue.Schedule(sim_->queue.now() + sim_->sc.rogue_interval, [this, g, remaining] {
    if (gen_ == g) RogueTick(remaining - 1);
  });
}

void PeerActor::Crash() {
  if (status_ == Status::kOffline || !sim_->net.IsUp(node)) return;
  const bool was_member = status_ != Status::kDown;
  Reset();
  status_ = Status::kDown;
  sim_->net.SetUp(node, false);
  sim_->Log("crash " + spec.id);
  if (!was_member) return;
  const double t = sim_->queue.now();
  const std::string id = spec.id;
  sim_->queue.Schedule(t + sim_->sc.failure_detect_delay,
                       [sim = sim_, id, t] { sim->coord->DetectFailure(id, t); });
}

void PeerActor::Leave() {
  if (status_ != Status::kMember && status_ != Status::kJoining) return;
  Reset();
  status_ = Status::kDown;
  sim_->Log("leave " + spec.id);
  sim_->Send(node, sim_->coord->node, protocol::LeaveMsg{});
}

void PeerActor::OnLinkFailure(NodeId other) {
  if (status_ != Status::kMember && status_ != Status::kJoining) return;
  sim_->Log("disconnect " + spec.id + " (link to " + sim_->net.name(other) + ")");
  Reset();
  status_ = Status::kDown;
  if (other != sim_->coord->node) sim_->Send(node, sim_->coord->node, protocol::LeaveMsg{});
}

const TriggerEntry* PeerActor::Entry(const std::string& id) const {
  if (!trigger_) return nullptr;
  for (const auto& e : trigger_->members) {
    if (e.peer_id == id) return &e;
  }
  return nullptr;
}

void PeerActor::OnMessage(NodeId from, const Message& m) {
  if (status_ == Status::kOffline || status_ == Status::kDown) return;
  const bool from_coord = from == sim_->coord->node;
  if (const auto* ack = std::get_if<protocol::JoinAckMsg>(&m)) {
    if (from_coord) OnJoinAck(*ack);
    return;
  }
  std::uint64_t round = 0;
  std::visit(
      [&](const auto& msg) {
        if constexpr (requires { msg.round_id; }) round = msg.round_id;
      },
      m);
  if (status_ == Status::kJoining) {
    buffered_[round].emplace_back(from, m);
    return;
  }
  if (const auto* t = std::get_if<protocol::TriggerMsg>(&m)) {
    if (!from_coord) return;
    if (t->round_id > round_) {
      buffered_[t->round_id].emplace_back(from, m);
    } else if (t->round_id == round_) {
      OnTrigger(*t);
    }
  } else if (const auto* s = std::get_if<protocol::SliceMsg>(&m)) {
    if (Admissible(s->round_id, s->attempt, from, m) == 1) OnSlice(from, *s);
  } else if (const auto* g = std::get_if<protocol::GatherMsg>(&m)) {
    if (Admissible(g->round_id, g->attempt, from, m) == 1) OnGather(from, *g);
  } else if (const auto* c = std::get_if<protocol::CommitMsg>(&m)) {
    if (from_coord && Admissible(c->round_id, c->attempt, from, m) == 1) OnCommit(*c);
  }
}

int PeerActor::Admissible(std::uint64_t round, std::uint32_t attempt, NodeId from,
                          const Message& m) {
  if (round < round_) return 0;
  if (round > round_ || !trigger_ || attempt > trigger_->attempt) {
    if (round > round_ + 1) return 0;
    buffered_[round].emplace_back(from, m);
    return -1;
  }
  return attempt == trigger_->attempt ? 1 : 0;
}

void PeerActor::Replay(std::uint64_t round) {
  auto it = buffered_.find(round);
  if (it == buffered_.end()) return;
  auto msgs = std::move(it->second);
  buffered_.erase(it);
  for (auto& [from, m] : msgs) {
    if (status_ != Status::kMember || round_ != round) break;
    OnMessage(from, m);
  }
}

void PeerActor::OnJoinAck(const protocol::JoinAckMsg& m) {
  if (status_ != Status::kJoining) return;
  const std::size_t n = sim_->task->param_dim();
  auto params = DecodeChunk(m.params, n);
  if (!params) {
    sim_->Log("malformed join-ack at " + spec.id);
    return;
  }
  params_ = std::move(*params);
  opt_.emplace(optim::Optimizer::LoadCheckpoint(m.optimizer, sim_->layers));
  status_ = Status::kMember;
  sim_->Log(Fmt("joined %s round=%" PRIu64, spec.id.c_str(), m.round_id));
  std::erase_if(buffered_, [&](const auto& kv) { return kv.first < m.round_id; });
  BeginRound(m.round_id);
}

void PeerActor::BeginRound(std::uint64_t round) {
  Reset();
  round_ = round;
  std::erase_if(buffered_, [&](const auto& kv) { return kv.first < round; });
  stream_.emplace(sim_->sc.seed, spec.id, round, sim_->task->num_samples());
  acc_ = protocol::GradSum(sim_->task->param_dim());
  accumulating_ = true;
  ScheduleMicrobatch();
  Replay(round);
}

void PeerActor::ScheduleMicrobatch() {
  const std::uint64_t g = gen_;
  const double dur = static_cast<double>(spec.microbatch) / spec.speed;
  sim_->queue.Schedule(sim_->queue.now() + dur, [this, g] {
    if (g != gen_ || status_ != Status::kMember || !accumulating_) return;
    std::vector<std::size_t> idx(spec.microbatch);
    for (auto& i : idx) i = stream_->Next();
    protocol::AccumulateLocal(*sim_->task, params_, idx, acc_);
    samples_ += spec.microbatch;
    snapshots_[samples_] = acc_.sum;
    sim_->Send(node, sim_->coord->node, protocol::ProgressMsg{round_, samples_});
    ScheduleMicrobatch();
  });
}

void PeerActor::OnTrigger(const protocol::TriggerMsg& m) {
  if (m.attempt <= last_attempt_ || stepped_) return;
  last_attempt_ = m.attempt;
  const bool restart = std::all_of(m.members.begin(), m.members.end(),
                                   [](const TriggerEntry& e) { return e.samples == 0; });
  ++gen_;
  slices_in_.clear();
  owner_sent_ = false;
  gathers_.clear();
  committed_ = false;
  if (restart) {
    // Nothing survived to aggregate: keep accumulating at the same parameters.
    trigger_.reset();
    accumulating_ = true;
    ScheduleMicrobatch();
    return;
  }
  trigger_ = m;
  accumulating_ = false;
  Contribute();
  Replay(round_);
}

void PeerActor::Contribute() {
  const TriggerEntry* me = Entry(spec.id);
  if (me == nullptr || me->samples == 0) return;
  auto snap = snapshots_.find(me->samples);
  if (snap == snapshots_.end()) {
    sim_->Log("missing snapshot at " + spec.id);
    return;
  }
  const double s = static_cast<double>(me->samples);
  std::vector<float> grad(snap->second.size());
  for (std::size_t j = 0; j < grad.size(); ++j) {
    grad[j] = static_cast<float>(snap->second[j] / s);
    if (spec.gradient_scale != 1.0) {
      grad[j] = static_cast<float>(static_cast<double>(grad[j]) * spec.gradient_scale);
    }
  }
  const auto& codec_policy = sim_->sc.codec;
  const codec::Scheme scheme = codec::SelectScheme(grad.size(), codec_policy);
  if (sim_->sc.mode == AggregationMode::kStar) {
    auto chunk = codec::Serialize(EncodeAs(scheme, grad, codec_policy));
    sim_->Send(node, sim_->coord->node,
               protocol::ContribMsg{round_, trigger_->attempt, me->samples, std::move(chunk)});
    return;
  }
  // Partitioned: the norm travels with each slice so owners can clip with
  // the full-vector norm of the transmitted gradient.
  struct Out {
    NodeId to;
    std::uint64_t begin;
    Bytes chunk;
  };
  std::vector<Out> outs;
  double sq = 0.0;
  for (const auto& e : trigger_->members) {
    if (e.slice_end <= e.slice_begin) continue;
    std::span<const float> part(grad.data() + e.slice_begin, e.slice_end - e.slice_begin);
    auto chunk = EncodeAs(scheme, part, codec_policy);
    for (float v : codec::Decode(chunk)) sq += static_cast<double>(v) * v;
    auto* owner = sim_->Peer(e.peer_id);
    outs.push_back({owner->node, e.slice_begin, codec::Serialize(chunk)});
  }
  const double norm = std::sqrt(sq);
  for (auto& o : outs) {
    sim_->Send(node, o.to,
               protocol::SliceMsg{round_, trigger_->attempt, me->samples, norm, o.begin,
                                  std::move(o.chunk)});
  }
}

void PeerActor::OnSlice(NodeId from, const protocol::SliceMsg& m) {
  const TriggerEntry* me = Entry(spec.id);
  const TriggerEntry* src = Entry(sim_->net.name(from));
  if (me == nullptr || src == nullptr || owner_sent_) return;
  if (src->samples == 0 || m.samples != src->samples || m.slice_begin != me->slice_begin) return;
  auto values = DecodeChunk(m.chunk, me->slice_end - me->slice_begin);
  if (!values) {
    sim_->Log("malformed slice from " + src->peer_id);
    return;
  }
  slices_in_[src->peer_id] = SliceIn{m.samples, m.grad_norm, std::move(*values)};
  std::size_t expected = 0;
  for (const auto& e : trigger_->members) expected += e.samples > 0 ? 1 : 0;
  if (slices_in_.size() < expected) return;

  std::vector<protocol::Contribution> contribs;
  std::vector<double> norms;
  for (auto& [id, in] : slices_in_) {
    contribs.push_back({PeerId{id}, in.samples, in.values});
    norms.push_back(in.norm);
  }
  auto policy = EffectivePolicy(sim_->sc.policy, contribs.size());
  auto agg = protocol::Aggregate(contribs, policy, norms);
  if (sim_->opt.on_aggregate) {
    sim_->opt.on_aggregate(AggregateRecord{round_, me->slice_begin, contribs, agg});
  }
  const codec::Scheme scheme =
      codec::SelectScheme(sim_->task->param_dim(), sim_->sc.codec);
  auto chunk = codec::Serialize(EncodeAs(scheme, agg, sim_->sc.codec));
  owner_sent_ = true;
  protocol::GatherMsg g{round_, trigger_->attempt, me->slice_begin, chunk};
  for (const auto& e : trigger_->members) {
    if (auto* p = sim_->Peer(e.peer_id)) sim_->Send(node, p->node, g);
  }
  sim_->Send(node, sim_->coord->node, g);
}

void PeerActor::OnGather(NodeId from, const protocol::GatherMsg& m) {
  const bool from_coord = from == sim_->coord->node;
  std::size_t len = 0;
  if (sim_->sc.mode == AggregationMode::kStar) {
    if (!from_coord || m.slice_begin != 0) return;
    len = params_.size();
  } else {
    const TriggerEntry* owner = nullptr;
    for (const auto& e : trigger_->members) {
      if (e.slice_begin == m.slice_begin && e.slice_end > e.slice_begin) owner = &e;
    }
    if (owner == nullptr) return;
    if (!from_coord && sim_->net.name(from) != owner->peer_id) return;
    len = owner->slice_end - owner->slice_begin;
  }
  if (gathers_.contains(m.slice_begin)) return;
  auto values = DecodeChunk(m.chunk, len);
  if (!values) {
    sim_->Log("malformed gather at " + spec.id);
    return;
  }
  gathers_[m.slice_begin] = std::move(*values);
  MaybeStep();
}

void PeerActor::OnCommit(const protocol::CommitMsg&) {
  committed_ = true;
  MaybeStep();
}

void PeerActor::MaybeStep() {
  if (stepped_ || !trigger_) return;
  std::vector<float> agg;
  if (sim_->sc.mode == AggregationMode::kStar) {
    auto it = gathers_.find(0);
    if (it == gathers_.end()) return;
    agg = it->second;
  } else {
    if (!committed_) return;
    agg.assign(params_.size(), 0.0f);
    for (const auto& e : trigger_->members) {
      if (e.slice_end <= e.slice_begin) continue;
      auto it = gathers_.find(e.slice_begin);
      if (it == gathers_.end()) return;
      std::copy(it->second.begin(), it->second.end(), agg.begin() + e.slice_begin);
    }
  }
  stepped_ = true;
  const TriggerEntry* me = Entry(spec.id);
  const std::uint64_t s = me ? me->samples : 0;
  opt_->Step(params_, agg, RoundLr(round_, sim_->sc.schedule));
  sim_->Send(node, sim_->coord->node,
             protocol::StepDoneMsg{round_, ParamHash(params_), s,
                                   static_cast<double>(s) / spec.speed});
  BeginRound(round_ + 1);
}

// --------------------------------------------------------- coordinator

Coordinator::Coordinator(Simulation* sim, NodeId node)
    : node(node),
      sim_(sim),
      params_(tasks::ToFloat(sim->task->InitialParams())),
      opt_(sim->sc.optimizer, sim->task->param_dim(), sim->layers) {}

std::optional<std::string> Coordinator::MemberOf(NodeId from) const {
  const std::string& name = sim_->net.name(from);
  auto it = members_.find(name);
  if (it == members_.end() || it->second.node != from) return std::nullopt;
  return name;
}

void Coordinator::Broadcast(const Message& m) {
  for (const auto& [id, mem] : members_) sim_->Send(node, mem.node, m);
}

void Coordinator::Start() {
  started_ = true;
  StartRound(0);
}

void Coordinator::OnMessage(NodeId from, const Message& m) {
  if (const auto* j = std::get_if<protocol::JoinMsg>(&m)) {
    OnJoin(from, *j);
    return;
  }
  auto id = MemberOf(from);
  if (!id) {
    sim_->Log(Fmt("ignore %s from non-member %s", protocol::MsgTypeName(protocol::TypeOf(m)),
                  sim_->net.name(from).c_str()));
    return;
  }
  std::visit(
      [&](const auto& msg) {
        using T = std::decay_t<decltype(msg)>;
        if constexpr (std::is_same_v<T, protocol::ProgressMsg>) OnProgress(*id, msg);
        if constexpr (std::is_same_v<T, protocol::ContribMsg>) OnContrib(*id, msg);
        if constexpr (std::is_same_v<T, protocol::GatherMsg>) OnGather(*id, msg);
        if constexpr (std::is_same_v<T, protocol::StepDoneMsg>) OnStepDone(*id, msg);
        if constexpr (std::is_same_v<T, protocol::LeaveMsg>) RemoveMember(*id, "leave");
      },
      m);
}

void Coordinator::OnLinkFailure(NodeId other) {
  if (auto id = MemberOf(other)) RemoveMember(*id, "link failure");
  std::erase_if(pending_, [&](const Pending& p) { return p.node == other; });
}

void Coordinator::DetectFailure(const std::string& peer, double crash_time) {
  std::erase_if(pending_, [&](const Pending& p) { return p.id == peer; });
  auto it = members_.find(peer);
  if (it == members_.end() || it->second.admitted_at > crash_time) return;
  RemoveMember(peer, "crash detected");
}

void Coordinator::OnJoin(NodeId from, const protocol::JoinMsg& m) {
  const std::string& name = sim_->net.name(from);
  if (name != m.peer_id ||
      protocol::Authenticate({PeerId{m.peer_id}, m.token}, sim_->allowlist) ==
          protocol::AuthResult::kReject) {
    sim_->Log("reject " + name);
    return;
  }
  // A member that joins again has restarted; its old incarnation is gone.
  if (members_.contains(m.peer_id)) RemoveMember(m.peer_id, "rejoin");
  std::erase_if(pending_, [&](const Pending& p) { return p.id == m.peer_id; });
  pending_.push_back({m.peer_id, from, m.bandwidth_score});
  sim_->Log("accept " + name);
  if (started_ && idle_ && !sim_->done) StartRound(round_);
}

void Coordinator::StartRound(std::uint64_t round) {
  round_ = round;
  if (churn_fired_.insert(round).second) sim_->OnRoundStart(round);
  for (const auto& p : pending_) {
    members_[p.id] = Member{p.node, p.score, sim_->queue.now()};
    protocol::JoinAckMsg ack{round, codec::Serialize(codec::EncodeF32(params_)),
                             opt_.SaveCheckpoint()};
    sim_->Send(node, p.node, ack);
    sim_->Log(Fmt("admit %s round=%" PRIu64, p.id.c_str(), round));
  }
  pending_.clear();
  entries_.clear();
  contribs_.clear();
  gather_chunks_.clear();
  gathers_.clear();
  committed_ = false;
  leader_stepped_ = false;
  awaiting_.clear();
  hashes_.clear();
  triggers_ = 0;
  std::set<PeerId> live;
  for (const auto& [id, mem] : members_) live.insert(PeerId{id});
  rs_ = protocol::RoundState(round, sim_->sc.target_batch, live);
  if (members_.empty()) {
    idle_ = true;  // an empty round state starts out aborted
    sim_->Log(Fmt("round %" PRIu64 " waiting for peers", round));
    return;
  }
  idle_ = false;
  sim_->Log(Fmt("round %" PRIu64 " start members=%zu", round, members_.size()));
  auto early = std::move(early_progress_);
  early_progress_.clear();
  for (const auto& [id, m] : early) {
    if (m.round_id == round && members_.contains(id)) OnProgress(id, m);
  }
}

void Coordinator::OnProgress(const std::string& id, const protocol::ProgressMsg& m) {
  if (m.round_id == round_ + 1) {
    early_progress_.emplace_back(id, m);
    return;
  }
  if (idle_ || m.round_id != round_ || rs_.phase() != protocol::Phase::kAccumulating) return;
  if (rs_.ReportProgress(PeerId{id}, m.samples)) Trigger();
}

void Coordinator::Trigger() {
  if (rs_.phase() == protocol::Phase::kAccumulating) rs_.BeginAggregation();
  ++attempt_;
  ++triggers_;
  entries_.clear();
  std::vector<double> scores;
  for (const auto& [id, mem] : members_) {
    TriggerEntry e;
    e.peer_id = id;
    auto c = rs_.contributions().find(PeerId{id});
    e.samples = c == rs_.contributions().end() ? 0 : c->second.samples;
    entries_.push_back(e);
    scores.push_back(mem.score);
  }
  if (sim_->sc.mode == AggregationMode::kPartitioned) {
    auto ranges = SliceAssignment(params_.size(), scores);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      entries_[i].slice_begin = ranges[i].first;
      entries_[i].slice_end = ranges[i].second;
    }
  }
  contribs_.clear();
  gather_chunks_.clear();
  gathers_.clear();
  sim_->Log(Fmt("trigger round=%" PRIu64 " attempt=%u samples=%" PRIu64, round_, attempt_,
                rs_.ContributedSamples()));
  Broadcast(protocol::TriggerMsg{round_, attempt_, entries_});
}

void Coordinator::Restart() {
  // Every pending contribution was lost: go back to accumulating.
  std::set<PeerId> live;
  for (const auto& [id, mem] : members_) live.insert(PeerId{id});
  rs_ = protocol::RoundState(round_, sim_->sc.target_batch, live);
  ++attempt_;
  entries_.clear();
  std::vector<TriggerEntry> zeros;
  for (const auto& [id, mem] : members_) zeros.push_back(TriggerEntry{id, 0, 0, 0});
  sim_->Log(Fmt("restart round=%" PRIu64 " attempt=%u", round_, attempt_));
  Broadcast(protocol::TriggerMsg{round_, attempt_, zeros});
}

void Coordinator::OnContrib(const std::string& id, const protocol::ContribMsg& m) {
  if (sim_->sc.mode != AggregationMode::kStar || m.round_id != round_ || m.attempt != attempt_ ||
      rs_.phase() != protocol::Phase::kAggregating) {
    return;
  }
  auto c = rs_.contributions().find(PeerId{id});
  if (c == rs_.contributions().end() || c->second.received || c->second.samples != m.samples) {
    return;
  }
  auto values = DecodeChunk(m.chunk, params_.size());
  if (!values) {
    sim_->Log("malformed contribution from " + id);
    RemoveMember(id, "malformed contribution");
    return;
  }
  contribs_[id] = protocol::Contribution{PeerId{id}, m.samples, std::move(*values)};
  rs_.MarkReceived(PeerId{id});
  if (rs_.AllReceived()) FinishStar();
}

void Coordinator::FinishStar() {
  std::vector<protocol::Contribution> list;
  for (const auto& [id, c] : contribs_) list.push_back(c);
  auto policy = EffectivePolicy(sim_->sc.policy, list.size());
  auto agg = protocol::Aggregate(list, policy);
  if (sim_->opt.on_aggregate) sim_->opt.on_aggregate(AggregateRecord{round_, 0, list, agg});
  const codec::Scheme scheme = codec::SelectScheme(agg.size(), sim_->sc.codec);
  const auto chunk = EncodeAs(scheme, agg, sim_->sc.codec);
  rs_.Advance(protocol::Phase::kStepping);
  for (const auto& [id, mem] : members_) awaiting_.insert(id);
  Broadcast(protocol::GatherMsg{round_, attempt_, 0, codec::Serialize(chunk)});
  LeaderStep(codec::Decode(chunk));
}

void Coordinator::OnGather(const std::string& id, const protocol::GatherMsg& m) {
  if (sim_->sc.mode != AggregationMode::kPartitioned || m.round_id != round_ ||
      m.attempt != attempt_ || rs_.phase() != protocol::Phase::kAggregating) {
    return;
  }
  const TriggerEntry* owner = nullptr;
  for (const auto& e : entries_) {
    if (e.peer_id == id && e.slice_begin == m.slice_begin && e.slice_end > e.slice_begin) {
      owner = &e;
    }
  }
  if (owner == nullptr || gathers_.contains(m.slice_begin)) return;
  auto values = DecodeChunk(m.chunk, owner->slice_end - owner->slice_begin);
  if (!values) {
    RemoveMember(id, "malformed gather");
    return;
  }
  gathers_[m.slice_begin] = std::move(*values);
  gather_chunks_[m.slice_begin] = m.chunk;
  for (const auto& e : entries_) {
    if (e.slice_end > e.slice_begin && !gathers_.contains(e.slice_begin)) return;
  }
  committed_ = true;
  rs_.Advance(protocol::Phase::kStepping);
  for (const auto& [mid, mem] : members_) awaiting_.insert(mid);
  sim_->Log(Fmt("commit round=%" PRIu64 " attempt=%u", round_, attempt_));
  Broadcast(protocol::CommitMsg{round_, attempt_});
  std::vector<float> agg(params_.size(), 0.0f);
  for (const auto& [begin, vals] : gathers_) {
    std::copy(vals.begin(), vals.end(), agg.begin() + begin);
  }
  LeaderStep(agg);
}

void Coordinator::LeaderStep(const std::vector<float>& agg) {
  opt_.Step(params_, agg, RoundLr(round_, sim_->sc.schedule));
  leader_hash_ = ParamHash(params_);
  leader_stepped_ = true;
  MaybeComplete();
}

void Coordinator::OnStepDone(const std::string& id, const protocol::StepDoneMsg& m) {
  if (m.round_id != round_ || rs_.phase() != protocol::Phase::kStepping ||
      !awaiting_.contains(id)) {
    return;
  }
  awaiting_.erase(id);
  hashes_[id] = m.param_hash;
  std::uint64_t credited = 0;
  for (const auto& e : entries_) {
    if (e.peer_id == id) credited = e.samples;
  }
  if (credited > 0) {
    sim_->result.ledger.Update(PeerId{id}, credited, m.compute_seconds);
  }
  MaybeComplete();
}

void Coordinator::MaybeComplete() {
  if (leader_stepped_ && awaiting_.empty() && rs_.phase() == protocol::Phase::kStepping) {
    CompleteRound();
  }
}

void Coordinator::CompleteRound() {
  rs_.Advance(protocol::Phase::kDone);
  RoundMetrics rm;
  rm.round = round_;
  rm.loss = sim_->task->MeanLoss(std::span<const float>(params_));
  rm.live_peers = static_cast<std::uint32_t>(members_.size());
  rm.bytes_total = sim_->net.total_bytes_sent();
  rm.sim_seconds = sim_->queue.now();
  rm.attempts = triggers_;
  for (const auto& e : entries_) {
    if (e.samples == 0) continue;
    if (sim_->sc.mode == AggregationMode::kStar && !contribs_.contains(e.peer_id)) continue;
    rm.samples_by_peer[e.peer_id] = e.samples;
    rm.contributed_samples += e.samples;
  }
  rm.peer_hashes = hashes_;
  rm.leader_hash = leader_hash_;
  for (const auto& [id, mem] : members_) rm.members.push_back(id);
  sim_->Log(Fmt("round %" PRIu64 " done loss=%.9g samples=%" PRIu64 " live=%u", round_, rm.loss,
                rm.contributed_samples, rm.live_peers));
  sim_->result.rounds.push_back(std::move(rm));
  if (sim_->opt.record_params) sim_->result.param_history.push_back(params_);
  if (sim_->result.rounds.size() >= sim_->sc.rounds) {
    sim_->done = true;
    sim_->result.completed = true;
    return;
  }
  StartRound(round_ + 1);
}

void Coordinator::Abort(const std::string& why) {
  if (rs_.phase() != protocol::Phase::kAborted) rs_.Advance(protocol::Phase::kAborted);
  idle_ = true;
  sim_->Log(Fmt("abort round=%" PRIu64 ": %s", round_, why.c_str()));
}

void Coordinator::RemoveMember(const std::string& id, const char* why) {
  auto it = members_.find(id);
  if (it == members_.end()) return;
  members_.erase(it);
  sim_->Log("remove " + id + " (" + why + ")");
  if (idle_) return;
  const protocol::Phase phase = rs_.phase();
  rs_ = protocol::HandlePeerFailure(std::move(rs_), PeerId{id});
  if (rs_.phase() == protocol::Phase::kAborted) {
    Abort("no live peers and no pending contributions");
    return;
  }
  switch (phase) {
    case protocol::Phase::kAccumulating:
      if (members_.empty()) Abort("no live peers");
      break;
    case protocol::Phase::kAggregating:
      if (sim_->sc.mode == AggregationMode::kStar) {
        contribs_.erase(id);
        if (!rs_.AllReceived()) break;
        if (rs_.contributions().empty()) {
          Restart();
        } else {
          FinishStar();
        }
      } else {
        if (members_.empty()) {
          Abort("no slice owners left");
        } else if (rs_.contributions().empty()) {
          Restart();
        } else {
          Trigger();
        }
      }
      break;
    case protocol::Phase::kStepping:
      awaiting_.erase(id);
      if (sim_->sc.mode == AggregationMode::kPartitioned) {
        // Members still waiting may lack the departed owner's slice.
        for (const auto& e : entries_) {
          if (e.peer_id != id || e.slice_end <= e.slice_begin) continue;
          protocol::GatherMsg g{round_, attempt_, e.slice_begin, gather_chunks_[e.slice_begin]};
          for (const auto& a : awaiting_) sim_->Send(node, members_.at(a).node, g);
        }
      }
      MaybeComplete();
      break;
    case protocol::Phase::kDone:
    case protocol::Phase::kAborted:
      break;
  }
}

// ---------------------------------------------------------- simulation

void Simulation::OnRoundStart(std::uint64_t round) {
  for (const auto& ev : sc.churn) {
    if (ev.round && *ev.round == round) {
      queue.Schedule(queue.now() + ev.offset, [this, ev] { Apply(ev); });
    }
  }
}

void Simulation::Apply(const ChurnEvent& ev) {
  if (done) return;
  PeerActor* p = Peer(ev.peer);
  switch (ev.kind) {
    case ChurnKind::kJoin: p->Join(); break;
    case ChurnKind::kCrash: p->Crash(); break;
    case ChurnKind::kLeave: p->Leave(); break;
  }
}

SimResult Simulation::Run() {
  sc.Validate();
  if (sc.allowlist.empty()) {
    std::vector<std::string> tokens;
    for (const auto& p : sc.peers) {
      if (!p.rogue) tokens.push_back(p.token);
    }
    allowlist = protocol::Allowlist(tokens);
  } else {
    allowlist = protocol::Allowlist(sc.allowlist);
  }

  const NodeId cnode = net.AddNode(kCoordinatorName, sc.coordinator_link);
  coord = std::make_unique<Coordinator>(this, cnode);
  for (const auto& spec : sc.peers) {
    const NodeId id = net.AddNode(spec.id, spec.link);
    peers.push_back(std::make_unique<PeerActor>(this, spec, id));
    by_id[spec.id] = peers.back().get();
    net.SetUp(id, false);
  }
  net.SetHandler(cnode, [this](NodeId from, const Bytes& b) {
    Message m;
    try {
      m = protocol::DecodeMessage(b);
    } catch (const Error&) {
      Log("malformed frame from " + net.name(from));
      return;
    }
    coord->OnMessage(from, m);
  });
  net.SetFailureHandler(cnode, [this](NodeId other) { coord->OnLinkFailure(other); });
  for (auto& p : peers) {
    PeerActor* actor = p.get();
    net.SetHandler(actor->node, [this, actor](NodeId from, const Bytes& b) {
      Message m;
      try {
        m = protocol::DecodeMessage(b);
      } catch (const Error&) {
        Log("malformed frame at " + actor->spec.id);
        return;
      }
      actor->OnMessage(from, m);
    });
    net.SetFailureHandler(actor->node, [actor](NodeId other) { actor->OnLinkFailure(other); });
    if (actor->spec.join_time) {
      queue.Schedule(*actor->spec.join_time, [actor] { actor->Join(); });
    }
  }
  for (const auto& ev : sc.churn) {
    if (ev.time) queue.Schedule(*ev.time + ev.offset, [this, ev] { Apply(ev); });
  }
  queue.Schedule(sc.start_time, [this] { coord->Start(); });

  while (!done) {
    if (!queue.RunNext()) {
      result.abort_reason = coord->idle() ? "no live peers" : "stalled";
      break;
    }
    if (queue.now() > sc.max_sim_seconds) {
      result.abort_reason = "time limit reached";
      break;
    }
  }
  if (!done) Log("run aborted: " + result.abort_reason);

  result.trace = trace.Text();
  result.final_params = coord->params();
  result.sim_seconds = queue.now();
  result.total_bytes_sent = net.total_bytes_sent();
  result.total_bytes_received = net.total_bytes_received();
  for (NodeId i = 0; i < net.num_nodes(); ++i) {
    result.bytes_sent_by_node[net.name(i)] = net.bytes_sent(i);
  }
  return std::move(result);
}

// -------------------------------------------------------------- parsing

using nlohmann::json;

double Num(const json& j, const char* key, double def) {
  if (!j.contains(key)) return def;
  if (!j.at(key).is_number()) {
    throw Error(ErrorCode::kInvalidConfig, std::string("'") + key + "' must be a number");
  }
  return j.at(key).get<double>();
}

std::uint64_t Count(const json& j, const char* key, std::uint64_t def) {
  if (!j.contains(key)) return def;
  const auto& v = j.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw Error(ErrorCode::kInvalidConfig,
                std::string("'") + key + "' must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

std::string Str(const json& j, const char* key, const std::string& def) {
  if (!j.contains(key)) return def;
  if (!j.at(key).is_string()) {
    throw Error(ErrorCode::kInvalidConfig, std::string("'") + key + "' must be a string");
  }
  return j.at(key).get<std::string>();
}

bool Flag(const json& j, const char* key, bool def) {
  if (!j.contains(key)) return def;
  if (!j.at(key).is_boolean()) {
    throw Error(ErrorCode::kInvalidConfig, std::string("'") + key + "' must be a boolean");
  }
  return j.at(key).get<bool>();
}

const json& Obj(const json& j, const char* key) {
  static const json kEmpty = json::object();
  if (!j.contains(key)) return kEmpty;
  if (!j.at(key).is_object()) {
    throw Error(ErrorCode::kInvalidConfig, std::string("'") + key + "' must be an object");
  }
  return j.at(key);
}

netsim::LinkSpec ParseLink(const json& j, netsim::LinkSpec def) {
  return {Num(j, "uplink_bps", def.uplink_bps), Num(j, "downlink_bps", def.downlink_bps)};
}

}  // namespace

double PeerSpec::EffectiveBandwidthScore() const {
  return bandwidth_score > 0.0 ? bandwidth_score : link.uplink_bps / 1e6;
}

std::uint64_t Scenario::max_microbatch() const {
  std::uint64_t m = 0;
  for (const auto& p : peers) m = std::max(m, p.microbatch);
  return m;
}

void Scenario::Validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kInvalidConfig, what); };
  if (rounds == 0) bad("rounds must be positive");
  if (target_batch == 0) bad("target_batch must be positive");
  if (peers.empty()) bad("scenario has no peers");
  if (!(start_time >= 0.0) || !(failure_detect_delay >= 0.0) || !(rogue_interval > 0.0)) {
    bad("timing values must be non-negative");
  }
  if (policy.kind == protocol::AggregationKind::kClippedMean && !(policy.clip_norm > 0.0)) {
    bad("clip_norm must be positive");
  }
  codec.Validate();
  optimizer.Validate();
  schedule.Validate();
  network.Validate();
  if (!(coordinator_link.uplink_bps > 0.0) || !(coordinator_link.downlink_bps > 0.0)) {
    bad("coordinator link rates must be positive");
  }
  std::set<std::string> ids;
  for (const auto& p : peers) {
    if (p.id.empty() || p.id == kCoordinatorName) bad("invalid peer id '" + p.id + "'");
    if (!ids.insert(p.id).second) bad("duplicate peer id '" + p.id + "'");
    if (!(p.speed > 0.0)) bad("peer " + p.id + ": speed must be positive");
    if (p.microbatch == 0) bad("peer " + p.id + ": microbatch must be positive");
    if (!(p.link.uplink_bps > 0.0) || !(p.link.downlink_bps > 0.0)) {
      bad("peer " + p.id + ": link rates must be positive");
    }
    if (p.bandwidth_score < 0.0) bad("peer " + p.id + ": bandwidth_score must be >= 0");
    if (p.join_time && !(*p.join_time >= 0.0)) bad("peer " + p.id + ": bad join_time");
    if (!std::isfinite(p.gradient_scale)) bad("peer " + p.id + ": bad gradient_scale");
  }
  for (const auto& ev : churn) {
    if (!ids.contains(ev.peer)) bad("churn event names unknown peer '" + ev.peer + "'");
    if (ev.time.has_value() == ev.round.has_value()) {
      bad("churn event needs exactly one of 'at' or 'round'");
    }
    if (!(ev.offset >= 0.0)) bad("churn offset must be non-negative");
    if (ev.time && !(*ev.time >= 0.0)) bad("churn time must be non-negative");
  }
}

Scenario ParseScenario(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("scenario is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::kInvalidConfig, "scenario must be a JSON object");
  Scenario sc;
  try {
    sc.name = Str(j, "name", sc.name);
    sc.seed = Count(j, "seed", 0);
    sc.rounds = Count(j, "rounds", sc.rounds);
    sc.target_batch = Count(j, "target_batch", sc.target_batch);

    const json& task = Obj(j, "task");
    sc.task.name = Str(task, "name", sc.task.name);
    sc.task.dim = Count(task, "dim", sc.task.dim);
    sc.task.samples = Count(task, "samples", sc.task.samples);
    sc.task.seed = Count(task, "seed", sc.seed);

    const json& agg = Obj(j, "aggregation");
    sc.policy.kind = protocol::ParseAggregationKind(Str(agg, "kind", "weighted_mean"));
    sc.policy.clip_norm = Num(agg, "clip_norm", sc.policy.clip_norm);
    sc.policy.trim_k = Count(agg, "trim_k", 0);
    const std::string mode = Str(agg, "mode", "star");
    if (mode == "star") {
      sc.mode = AggregationMode::kStar;
    } else if (mode == "partitioned") {
      sc.mode = AggregationMode::kPartitioned;
    } else {
      throw Error(ErrorCode::kInvalidConfig, "unknown aggregation mode '" + mode + "'");
    }

    const json& cod = Obj(j, "codec");
    sc.codec.q8_threshold = Count(cod, "q8_threshold", sc.codec.q8_threshold);
    sc.codec.block_size = static_cast<std::uint32_t>(Count(cod, "block_size", sc.codec.block_size));
    sc.codec.lossless = Flag(cod, "lossless", false);

    const json& opt = Obj(j, "optimizer");
    const std::string algo = Str(opt, "algorithm", "adam");
    if (algo == "adam") {
      sc.optimizer = optim::OptimConfig::Adam();
    } else if (algo == "lamb") {
      sc.optimizer = optim::OptimConfig::Lamb();
    } else {
      throw Error(ErrorCode::kInvalidConfig, "unknown optimizer '" + algo + "'");
    }
    auto& oc = sc.optimizer;
    oc.beta1 = Num(opt, "beta1", oc.beta1);
    oc.beta2 = Num(opt, "beta2", oc.beta2);
    oc.epsilon = Num(opt, "epsilon", oc.epsilon);
    oc.weight_decay = Num(opt, "weight_decay", oc.weight_decay);
    if (opt.contains("trust_clip")) {
      const auto& tc = opt.at("trust_clip");
      if (!tc.is_array() || tc.size() != 2) {
        throw Error(ErrorCode::kInvalidConfig, "'trust_clip' must be [min, max]");
      }
      oc.trust_clip = {tc[0].get<double>(), tc[1].get<double>()};
    }
    const std::uint64_t bits = Count(opt, "state_bits", 32);
    if (bits != 8 && bits != 32) throw Error(ErrorCode::kInvalidConfig, "state_bits must be 8 or 32");
    oc.state_bits = bits == 8 ? optim::StateBits::k8 : optim::StateBits::k32;
    const std::string tier = Str(opt, "state_tier", "compute");
    if (tier != "compute" && tier != "offloaded") {
      throw Error(ErrorCode::kInvalidConfig, "state_tier must be compute or offloaded");
    }
    oc.state_tier = tier == "offloaded" ? optim::Tier::kOffloaded : optim::Tier::kCompute;
    oc.block_size = static_cast<std::uint32_t>(Count(opt, "block_size", oc.block_size));

    const json& sch = Obj(j, "schedule");
    sc.schedule.total_steps = Count(sch, "total_steps", sc.rounds);
    sc.schedule.warmup_fraction = Num(sch, "warmup_fraction", 0.1);
    sc.schedule.peak_lr = Num(sch, "peak_lr", 1e-2);
    sc.schedule.end_lr = Num(sch, "end_lr", 0.0);

    const json& net = Obj(j, "network");
    sc.network.seed = Count(net, "seed", sc.seed);
    sc.network.latency = Num(net, "latency", sc.network.latency);
    sc.network.drop_prob = Num(net, "drop_prob", 0.0);
    sc.network.max_retries = static_cast<std::uint32_t>(Count(net, "max_retries", 5));
    sc.coordinator_link = ParseLink(Obj(j, "coordinator"), sc.coordinator_link);

    const json& timing = Obj(j, "timing");
    sc.start_time = Num(timing, "start_time", sc.start_time);
    sc.failure_detect_delay = Num(timing, "failure_detect_delay", sc.failure_detect_delay);
    sc.max_sim_seconds = Num(timing, "max_sim_seconds", sc.max_sim_seconds);
    sc.rogue_interval = Num(timing, "rogue_interval", sc.rogue_interval);

    if (!j.contains("peers") || !j.at("peers").is_array()) {
      throw Error(ErrorCode::kInvalidConfig, "'peers' must be an array");
    }
    for (const auto& pj : j.at("peers")) {
      if (!pj.is_object()) throw Error(ErrorCode::kInvalidConfig, "peer entries must be objects");
      PeerSpec p;
      p.id = Str(pj, "id", "");
      p.token = Str(pj, "token", "");
      p.speed = Num(pj, "speed", p.speed);
      p.link = ParseLink(pj, p.link);
      p.bandwidth_score = Num(pj, "bandwidth_score", 0.0);
      p.microbatch = Count(pj, "microbatch", p.microbatch);
      if (pj.contains("join_time") && pj.at("join_time").is_null()) {
        p.join_time.reset();
      } else {
        p.join_time = Num(pj, "join_time", 0.0);
      }
      p.rogue = Flag(pj, "rogue", false);
      p.gradient_scale = Num(pj, "gradient_scale", 1.0);
      sc.peers.push_back(std::move(p));
    }

    if (j.contains("allowlist")) {
      if (!j.at("allowlist").is_array()) {
        throw Error(ErrorCode::kInvalidConfig, "'allowlist' must be an array of tokens");
      }
      for (const auto& t : j.at("allowlist")) sc.allowlist.push_back(t.get<std::string>());
    }

    if (j.contains("churn")) {
      if (!j.at("churn").is_array()) throw Error(ErrorCode::kInvalidConfig, "'churn' must be an array");
      for (const auto& cj : j.at("churn")) {
        ChurnEvent ev;
        ev.peer = Str(cj, "peer", "");
        const std::string kind = Str(cj, "event", "");
        if (kind == "join") {
          ev.kind = ChurnKind::kJoin;
        } else if (kind == "crash") {
          ev.kind = ChurnKind::kCrash;
        } else if (kind == "leave") {
          ev.kind = ChurnKind::kLeave;
        } else {
          throw Error(ErrorCode::kInvalidConfig, "unknown churn event '" + kind + "'");
        }
        if (cj.contains("at")) ev.time = Num(cj, "at", 0.0);
        if (cj.contains("round")) ev.round = Count(cj, "round", 0);
        ev.offset = Num(cj, "offset", 0.0);
        sc.churn.push_back(ev);
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("scenario: ") + e.what());
  }
  sc.Validate();
  return sc;
}

Scenario LoadScenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open scenario " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  Scenario sc = ParseScenario(ss.str());
  if (sc.name == "scenario") {
    auto slash = path.find_last_of('/');
    sc.name = path.substr(slash == std::string::npos ? 0 : slash + 1);
  }
  return sc;
}

bool RoundMetrics::HashesConsistent() const {
  return std::all_of(peer_hashes.begin(), peer_hashes.end(),
                     [&](const auto& kv) { return kv.second == leader_hash; });
}

SimResult RunSimulation(const Scenario& scenario, const SimOptions& options) {
  Simulation sim(scenario, options);
  return sim.Run();
}

std::string MetricsCsv(const SimResult& result) {
  std::string out = "round,loss,live_peers,bytes_total,sim_seconds\n";
  for (const auto& r : result.rounds) {
    out += Fmt("%" PRIu64 ",%.9g,%u,%" PRIu64 ",%.6f\n", r.round, r.loss, r.live_peers,
               r.bytes_total, r.sim_seconds);
  }
  return out;
}

std::vector<std::pair<std::uint64_t, std::uint64_t>> SliceAssignment(
    std::uint64_t n, std::span<const double> scores) {
  std::vector<std::pair<std::uint64_t, std::uint64_t>> out;
  if (scores.empty()) return out;
  long double total = 0.0L;
  for (double s : scores) total += s > 0.0 ? s : 0.0;
  long double cum = 0.0L;
  std::uint64_t begin = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    cum += total > 0.0L ? (scores[i] > 0.0 ? scores[i] : 0.0) : 1.0L;
    const long double denom = total > 0.0L ? total : static_cast<long double>(scores.size());
    std::uint64_t end = i + 1 == scores.size()
                            ? n
                            : static_cast<std::uint64_t>(std::floor(n * cum / denom));
    end = std::clamp(end, begin, n);
    out.emplace_back(begin, end);
    begin = end;
  }
  return out;
}

std::uint64_t ParamHash(std::span<const float> params) {
  return Fnv1a64(AsBytes(params));
}

SampleStream::SampleStream(std::uint64_t seed, const std::string& peer, std::uint64_t round,
                           std::size_t num_samples)
    : rng_(MixSeed(MixSeed(seed ^ 0x5a3d1e0fULL, NameHash(peer)), round)), n_(num_samples) {
  if (num_samples == 0) throw Error(ErrorCode::kInvalidConfig, "task has no samples");
}

std::size_t EffectiveTrim(std::size_t trim_k, std::size_t num_contributions) {
  const std::size_t half = num_contributions / 2;
  const std::size_t cap = half >= 1 ? half - 1 : 0;
  return std::min(trim_k, cap);
}

double RoundLr(std::uint64_t round, const optim::ScheduleConfig& schedule) {
  return optim::LrAt(std::min<std::uint64_t>(round + 1, schedule.total_steps), schedule);
}

std::vector<std::vector<float>> ReplaySingleNode(const Scenario& scenario,
                                                 const SimResult& result) {
  auto task = tasks::MakeTask(scenario.task);
  std::map<std::string, double> scale;
  for (const auto& p : scenario.peers) scale[p.id] = p.gradient_scale;
  std::vector<float> w = tasks::ToFloat(task->InitialParams());
  optim::Optimizer opt(scenario.optimizer, w.size(), task->Layers());
  std::vector<std::vector<float>> history;
  for (const auto& r : result.rounds) {
    std::vector<protocol::Contribution> contribs;
    for (const auto& [peer, s] : r.samples_by_peer) {
      SampleStream stream(scenario.seed, peer, r.round, task->num_samples());
      std::vector<std::size_t> idx(s);
      for (auto& i : idx) i = stream.Next();
      auto acc = protocol::AccumulateLocal(*task, w, idx);
      std::vector<float> g(acc.sum.size());
      for (std::size_t j = 0; j < g.size(); ++j) {
        g[j] = static_cast<float>(acc.sum[j] / static_cast<double>(s));
        if (scale[peer] != 1.0) g[j] = static_cast<float>(static_cast<double>(g[j]) * scale[peer]);
      }
      contribs.push_back({PeerId{peer}, s, std::move(g)});
    }
    if (contribs.empty()) {
      history.push_back(w);
      continue;
    }
    auto agg = protocol::Aggregate(contribs, EffectivePolicy(scenario.policy, contribs.size()));
    opt.Step(w, agg, RoundLr(r.round, scenario.schedule));
    history.push_back(w);
  }
  return history;
}

}  // namespace swarm::sim
