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

#include "swarm/net_sim.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <memory>

#include "swarm/error.hpp"
#include "swarm/wire.hpp"

namespace swarm::netsim {
namespace {

std::uint64_t NameHash(const std::string& s) {
  return Fnv1a64({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

}  // namespace

void NetConfig::Validate() const {
  if (!(latency >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "latency < 0");
  if (!(drop_prob >= 0.0 && drop_prob < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "drop_prob must lie in [0, 1)");
  }
}

void EventQueue::Schedule(double time, Callback cb) {
  if (time < now_) time = now_;
  heap_.push(Event{time, seq_++, std::move(cb)});
}

bool EventQueue::RunNext() {
  if (heap_.empty()) return false;
  // priority_queue::top is const; the callback is moved out via a copy of the
  // node, which is cheap for std::function holding small lambdas.
  Event ev = heap_.top();
  heap_.pop();
  now_ = ev.time;
  ++executed_;
  ev.cb();
  return true;
}

void Trace::Add(double time, std::string_view text) {
  if (!enabled_) return;
  char stamp[40];
  std::snprintf(stamp, sizeof stamp, "%.9f ", time);
  lines_.push_back(std::string(stamp).append(text));
}

std::string Trace::Text() const {
  std::string out;
  for (const auto& l : lines_) {
    out += l;
    out += '\n';
  }
  return out;
}

Network::Network(NetConfig cfg, EventQueue* queue, Trace* trace)
    : cfg_(cfg), queue_(queue), trace_(trace) {
  cfg_.Validate();
}

NodeId Network::AddNode(const std::string& name, LinkSpec link) {
  if (!(link.uplink_bps > 0.0) || !(link.downlink_bps > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "bandwidth of '" + name + "' must be positive");
  }
  if (Find(name)) throw Error(ErrorCode::kInvalidConfig, "duplicate node '" + name + "'");
  Node n;
  n.name = name;
  n.link = link;
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

const Network::Node& Network::node(NodeId id) const {
  if (id >= nodes_.size()) throw Error(ErrorCode::kUnknownPeer, "node " + std::to_string(id));
  return nodes_[id];
}

Network::Node& Network::node(NodeId id) {
  if (id >= nodes_.size()) throw Error(ErrorCode::kUnknownPeer, "node " + std::to_string(id));
  return nodes_[id];
}

const std::string& Network::name(NodeId id) const { return node(id).name; }

std::optional<NodeId> Network::Find(const std::string& name) const {
  for (NodeId i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].name == name) return i;
  }
  return std::nullopt;
}

double Network::TransferSeconds(std::uint64_t size_bytes, NodeId from, NodeId to) const {
  const double bps = std::min(node(from).link.uplink_bps, node(to).link.downlink_bps);
  return static_cast<double>(size_bytes) * 8.0 / bps;
}

SplitMix64& Network::LinkRng(NodeId from, NodeId to) {
  auto it = link_rng_.find({from, to});
  if (it == link_rng_.end()) {
    const std::uint64_t seed =
        MixSeed(MixSeed(cfg_.seed, NameHash(node(from).name)), NameHash(node(to).name));
    it = link_rng_.emplace(std::make_pair(from, to), SplitMix64(seed)).first;
  }
  return it->second;
}

std::optional<double> Network::Deliver(std::uint64_t size_bytes, NodeId from, NodeId to,
                                       double t_send) {
  const double t = t_send + cfg_.latency + TransferSeconds(size_bytes, from, to);
  if (cfg_.drop_prob > 0.0 && LinkRng(from, to).uniform() < cfg_.drop_prob) return std::nullopt;
  return t;
}

void Network::SetHandler(NodeId id, Handler h) { node(id).handler = std::move(h); }
void Network::SetFailureHandler(NodeId id, FailureHandler h) { node(id).on_failure = std::move(h); }

void Network::SetUp(NodeId id, bool up) {
  Node& n = node(id);
  if (n.up == up) return;
  if (!up) {
    n.down_at[n.incarnation] = queue_->now();
  } else {
    ++n.incarnation;
  }
  n.up = up;
}

bool Network::IsUp(NodeId id) const { return node(id).up; }

void Network::SetLink(NodeId id, LinkSpec link) { node(id).link = link; }

void Network::Send(NodeId from, NodeId to, Bytes payload, std::string_view label) {
  Node& src = node(from);
  node(to);
  if (!src.up) return;
  auto shared = std::make_shared<const Bytes>(std::move(payload));
  if (from == to) {
    const std::uint64_t inc = src.incarnation;
    queue_->Schedule(queue_->now(), [this, from, shared, inc] {
      Node& n = node(from);
      if (n.up && n.incarnation == inc && n.handler) n.handler(from, *shared);
    });
    return;
  }
  const std::uint64_t seq = order_[{from, to}].next_seq++;
  Attempt(from, to, std::move(shared), std::string(label), 0, src.incarnation,
          node(to).incarnation, seq);
}

// Frames on one directed link are handed over in send order, as a reliable
// stream would: a frame that arrives early waits for its predecessors.
void Network::Release(NodeId from, NodeId to, std::uint64_t seq, std::function<void()> action) {
  LinkOrder& lo = order_[{from, to}];
  lo.ready.emplace(seq, std::move(action));
  while (!lo.ready.empty() && lo.ready.begin()->first == lo.next_release) {
    auto f = std::move(lo.ready.begin()->second);
    lo.ready.erase(lo.ready.begin());
    ++lo.next_release;
    if (f) f();
  }
}

void Network::Attempt(NodeId from, NodeId to, std::shared_ptr<const Bytes> payload,
                      std::string label, std::uint32_t attempt, std::uint64_t from_inc,
                      std::uint64_t to_inc, std::uint64_t seq) {
  Node& src = node(from);
  if (!src.up || src.incarnation != from_inc) {
    Release(from, to, seq, nullptr);
    return;
  }
  const double now = queue_->now();
  const std::uint64_t size = payload->size();
  src.sent += size;
  char buf[160];
  std::snprintf(buf, sizeof buf, "send %s %s->%s bytes=%" PRIu64 " attempt=%u", label.c_str(),
                src.name.c_str(), node(to).name.c_str(), size, attempt);
  trace_->Add(now, buf);

  // The uplink carries one transfer at a time.
  const double start = std::max(now, src.uplink_free_at);
  const double wire = TransferSeconds(size, from, to);
  src.uplink_free_at = start + wire;
  const double nominal = start + cfg_.latency + wire;
  const auto arrival = Deliver(size, from, to, start);
  if (!arrival) {
    std::snprintf(buf, sizeof buf, "drop %s %s->%s attempt=%u", label.c_str(), src.name.c_str(),
                  node(to).name.c_str(), attempt);
    trace_->Add(now, buf);
    const double retry_at = nominal + cfg_.latency;
    if (attempt >= cfg_.max_retries) {
      queue_->Schedule(retry_at, [this, from, to, label, from_inc, to_inc, seq] {
        char line[160];
        std::snprintf(line, sizeof line, "lost %s %s->%s", label.c_str(), name(from).c_str(),
                      name(to).c_str());
        trace_->Add(queue_->now(), line);
        Node& a = node(from);
        Node& b = node(to);
        if (a.up && a.incarnation == from_inc && a.on_failure) a.on_failure(to);
        if (b.up && b.incarnation == to_inc && b.on_failure) b.on_failure(from);
        Release(from, to, seq, nullptr);
      });
      return;
    }
    queue_->Schedule(retry_at, [this, from, to, payload, label, attempt, from_inc, to_inc, seq] {
      Attempt(from, to, payload, label, attempt + 1, from_inc, to_inc, seq);
    });
    return;
  }

  const double upload_done = *arrival - cfg_.latency;
  queue_->Schedule(*arrival, [this, from, to, payload, label, from_inc, to_inc, upload_done, seq] {
    Release(from, to, seq, [this, from, to, payload, label, from_inc, to_inc, upload_done] {
      const Node& a = node(from);
      Node& b = node(to);
      bool lost = false;
      auto crashed = a.down_at.find(from_inc);
      if (crashed != a.down_at.end() && crashed->second < upload_done) lost = true;
      if (!b.up || b.incarnation != to_inc) lost = true;
      char line[160];
      std::snprintf(line, sizeof line, "%s %s %s->%s bytes=%zu", lost ? "discard" : "deliver",
                    label.c_str(), a.name.c_str(), b.name.c_str(), payload->size());
      trace_->Add(queue_->now(), line);
      if (lost) return;
      b.received += payload->size();
      if (b.handler) b.handler(from, *payload);
    });
  });
}

std::uint64_t Network::bytes_sent(NodeId id) const { return node(id).sent; }
std::uint64_t Network::bytes_received(NodeId id) const { return node(id).received; }

std::uint64_t Network::total_bytes_sent() const {
  std::uint64_t s = 0;
  for (const auto& n : nodes_) s += n.sent;
  return s;
}

std::uint64_t Network::total_bytes_received() const {
  std::uint64_t s = 0;
  for (const auto& n : nodes_) s += n.received;
  return s;
}

}  // namespace swarm::netsim
