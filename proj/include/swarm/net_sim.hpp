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

// Deterministic discrete-event network model.
//
// Links are store-and-forward: a message of b bytes sent at t arrives at
//   t + latency + 8 b / min(uplink(from), downlink(to)).
// Each attempt is dropped with probability drop_prob, drawn from a generator
// private to the directed link, so traffic on one link never perturbs drop
// decisions on another. Dropped attempts are retried after the nominal
// delivery time plus one latency (a missing acknowledgement); once the retry
// budget is spent both endpoints are told the link failed.
//
// A message is lost when its sender goes down before the last byte leaves
// (delivery time minus latency) or its receiver is down, or has restarted,
// at delivery.
//
// A node's uplink serialises its transfers: a send starts when the previous
// one has left. Frames on one directed link are handed to the receiver in
// send order.

#ifndef SWARM_NET_SIM_HPP_
#define SWARM_NET_SIM_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <string>
#include <string_view>
#include <vector>

#include "swarm/random.hpp"

namespace swarm::netsim {

using NodeId = std::uint32_t;
using Bytes = std::vector<std::uint8_t>;

struct LinkSpec {
  double uplink_bps = 20e6;
  double downlink_bps = 100e6;
};

struct NetConfig {
  std::uint64_t seed = 0;
  double latency = 0.05;
  double drop_prob = 0.0;
  std::uint32_t max_retries = 5;

  void Validate() const;
};

class EventQueue {
 public:
  using Callback = std::function<void()>;

  // Events at equal times run in scheduling order.
  void Schedule(double time, Callback cb);
  // Runs the earliest event; false when the queue is empty.
  bool RunNext();
  double now() const { return now_; }
  bool empty() const { return heap_.empty(); }
  std::size_t size() const { return heap_.size(); }
  std::uint64_t executed() const { return executed_; }

 private:
  struct Event {
    double time;
    std::uint64_t seq;
    Callback cb;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.time != b.time ? a.time > b.time : a.seq > b.seq;
    }
  };

  std::priority_queue<Event, std::vector<Event>, Later> heap_;
  double now_ = 0.0;
  std::uint64_t seq_ = 0;
  std::uint64_t executed_ = 0;
};

// Append-only text trace; one line per event, fixed formatting.
class Trace {
 public:
  explicit Trace(bool enabled = true) : enabled_(enabled) {}
  void Add(double time, std::string_view text);
  const std::vector<std::string>& lines() const { return lines_; }
  std::string Text() const;
  bool enabled() const { return enabled_; }

 private:
  bool enabled_;
  std::vector<std::string> lines_;
};

class Network {
 public:
  using Handler = std::function<void(NodeId from, const Bytes& payload)>;
  using FailureHandler = std::function<void(NodeId other)>;

  Network(NetConfig cfg, EventQueue* queue, Trace* trace);

  NodeId AddNode(const std::string& name, LinkSpec link);
  const std::string& name(NodeId id) const;
  std::optional<NodeId> Find(const std::string& name) const;
  std::size_t num_nodes() const { return nodes_.size(); }
  const NetConfig& config() const { return cfg_; }

  // Seconds spent on the wire, excluding latency.
  double TransferSeconds(std::uint64_t size_bytes, NodeId from, NodeId to) const;
  // One delivery attempt: arrival time, or nullopt when dropped. Consumes one
  // draw from the link's generator. Throws kUnknownPeer.
  std::optional<double> Deliver(std::uint64_t size_bytes, NodeId from, NodeId to, double t_send);

  void SetHandler(NodeId id, Handler h);
  void SetFailureHandler(NodeId id, FailureHandler h);

  // Sends at the current queue time with retries. A node sending to itself
  // is delivered at the same instant without touching the wire.
  void Send(NodeId from, NodeId to, Bytes payload, std::string_view label);

  void SetUp(NodeId id, bool up);
  bool IsUp(NodeId id) const;
  void SetLink(NodeId id, LinkSpec link);

  std::uint64_t bytes_sent(NodeId id) const;
  std::uint64_t bytes_received(NodeId id) const;
  std::uint64_t total_bytes_sent() const;
  std::uint64_t total_bytes_received() const;

 private:
  struct Node {
    std::string name;
    LinkSpec link;
    Handler handler;
    FailureHandler on_failure;
    bool up = true;
    std::uint64_t incarnation = 0;
    std::map<std::uint64_t, double> down_at;  // incarnation -> crash time
    std::uint64_t sent = 0;
    std::uint64_t received = 0;
    double uplink_free_at = 0.0;
  };

  struct LinkOrder {
    std::uint64_t next_seq = 0;
    std::uint64_t next_release = 0;
    std::map<std::uint64_t, std::function<void()>> ready;
  };

  void Attempt(NodeId from, NodeId to, std::shared_ptr<const Bytes> payload, std::string label,
               std::uint32_t attempt, std::uint64_t from_inc, std::uint64_t to_inc,
               std::uint64_t seq);
  void Release(NodeId from, NodeId to, std::uint64_t seq, std::function<void()> action);
  const Node& node(NodeId id) const;
  Node& node(NodeId id);
  SplitMix64& LinkRng(NodeId from, NodeId to);

  NetConfig cfg_;
  EventQueue* queue_;
  Trace* trace_;
  std::vector<Node> nodes_;
  std::map<std::pair<NodeId, NodeId>, SplitMix64> link_rng_;
  std::map<std::pair<NodeId, NodeId>, LinkOrder> order_;
};

}  // namespace swarm::netsim

#endif  // SWARM_NET_SIM_HPP_
