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

#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>

#include "test_support.hpp"

namespace swarm::netsim {
namespace {

using swarm::testing::ErrorOf;

struct Fixture {
  explicit Fixture(NetConfig cfg) : net(cfg, &queue, &trace) {}
  void RunAll() {
    while (queue.RunNext()) {
    }
  }
  EventQueue queue;
  Trace trace;
  Network net;
};

double TimeOf(const std::string& line) { return std::strtod(line.c_str(), nullptr); }

TEST(Deliver, MegabyteAtEightMbit) {
  Fixture f(NetConfig{1, 0.05, 0.0, 0});
  const auto a = f.net.AddNode("a", {8e6, 8e6});
  const auto b = f.net.AddNode("b", {8e6, 8e6});
  EXPECT_DOUBLE_EQ(*f.net.Deliver(1000000, a, b, 0.0), 1.05);
  EXPECT_DOUBLE_EQ(*f.net.Deliver(0, a, b, 2.0), 2.05);
}

TEST(Deliver, SlowerEndBinds) {
  Fixture f(NetConfig{1, 0.0, 0.0, 0});
  const auto a = f.net.AddNode("a", {10e6, 100e6});
  const auto b = f.net.AddNode("b", {100e6, 5e6});
  EXPECT_DOUBLE_EQ(f.net.TransferSeconds(1000, a, b), 8000 / 5e6);
  EXPECT_DOUBLE_EQ(f.net.TransferSeconds(1000, b, a), 8000 / 100e6);
}

TEST(Deliver, DoublingBandwidthHalvesTransfer) {
  Fixture f(NetConfig{1, 0.02, 0.0, 0});
  const auto a = f.net.AddNode("a", {10e6, 1e9});
  const auto b = f.net.AddNode("b", {1e9, 1e9});
  const double t1 = f.net.TransferSeconds(123456, a, b);
  f.net.SetLink(a, {20e6, 1e9});
  EXPECT_EQ(f.net.TransferSeconds(123456, a, b), t1 / 2);
}

TEST(Deliver, UnknownPeer) {
  Fixture f(NetConfig{});
  const auto a = f.net.AddNode("a", {});
  EXPECT_EQ(ErrorOf([&] { f.net.Deliver(10, a, 7, 0.0); }), ErrorCode::kUnknownPeer);
}

TEST(Config, Validation) {
  EXPECT_EQ(ErrorOf([] { NetConfig{0, 0.05, 1.0, 0}.Validate(); }), ErrorCode::kInvalidConfig);
  EXPECT_EQ(ErrorOf([] { NetConfig{0, -1.0, 0.0, 0}.Validate(); }), ErrorCode::kInvalidConfig);
  Fixture f(NetConfig{});
  EXPECT_EQ(ErrorOf([&] { f.net.AddNode("x", {0.0, 1.0}); }), ErrorCode::kInvalidConfig);
  f.net.AddNode("y", {});
  EXPECT_EQ(ErrorOf([&] { f.net.AddNode("y", {}); }), ErrorCode::kInvalidConfig);
}

TEST(Deliver, DropRateMatchesProbability) {
  Fixture f(NetConfig{9, 0.0, 0.3, 0});
  const auto a = f.net.AddNode("a", {});
  const auto b = f.net.AddNode("b", {});
  int drops = 0;
  for (int i = 0; i < 20000; ++i) drops += !f.net.Deliver(1, a, b, 0.0);
  EXPECT_NEAR(drops / 20000.0, 0.3, 0.015);
}

TEST(EventQueue, TimeOrderThenFifo) {
  EventQueue q;
  std::string order;
  q.Schedule(2.0, [&] { order += 'c'; });
  q.Schedule(1.0, [&] { order += 'a'; });
  q.Schedule(1.0, [&] { order += 'b'; });
  while (q.RunNext()) {
  }
  EXPECT_EQ(order, "abc");
  EXPECT_EQ(q.now(), 2.0);
}

TEST(Send, InOrderPerLinkDespiteRetries) {
  Fixture f(NetConfig{3, 0.01, 0.4, 50});
  const auto a = f.net.AddNode("a", {1e6, 1e6});
  const auto b = f.net.AddNode("b", {1e6, 1e6});
  std::vector<std::uint8_t> got;
  f.net.SetHandler(b, [&](NodeId, const Bytes& p) { got.push_back(p[0]); });
  for (std::uint8_t i = 0; i < 100; ++i) f.net.Send(a, b, Bytes(10 + i, i), "m");
  f.RunAll();
  ASSERT_EQ(got.size(), 100u);
  for (std::uint8_t i = 0; i < 100; ++i) EXPECT_EQ(got[i], i);
}

TEST(Send, UplinkSerializesTransfers) {
  Fixture f(NetConfig{0, 0.0, 0.0, 0});
  const auto a = f.net.AddNode("a", {8e6, 8e6});
  const auto b = f.net.AddNode("b", {8e6, 8e6});
  const auto c = f.net.AddNode("c", {8e6, 8e6});
  std::vector<double> at;
  f.net.SetHandler(b, [&](NodeId, const Bytes&) { at.push_back(f.queue.now()); });
  f.net.SetHandler(c, [&](NodeId, const Bytes&) { at.push_back(f.queue.now()); });
  f.net.Send(a, b, Bytes(1000000), "x");
  f.net.Send(a, c, Bytes(1000000), "y");
  f.RunAll();
  ASSERT_EQ(at.size(), 2u);
  EXPECT_DOUBLE_EQ(at[0], 1.0);
  EXPECT_DOUBLE_EQ(at[1], 2.0);
}

TEST(Send, SelfSendIsImmediateAndFree) {
  Fixture f(NetConfig{});
  const auto a = f.net.AddNode("a", {});
  int n = 0;
  f.net.SetHandler(a, [&](NodeId from, const Bytes&) {
    EXPECT_EQ(from, a);
    ++n;
  });
  f.net.Send(a, a, Bytes(100), "self");
  f.RunAll();
  EXPECT_EQ(n, 1);
  EXPECT_EQ(f.queue.now(), 0.0);
  EXPECT_EQ(f.net.total_bytes_sent(), 0u);
}

TEST(Send, ExhaustedRetriesReportFailure) {
  Fixture f(NetConfig{1, 0.01, 0.99, 2});
  const auto a = f.net.AddNode("a", {});
  const auto b = f.net.AddNode("b", {});
  int failures = 0, delivered = 0;
  f.net.SetFailureHandler(a, [&](NodeId other) {
    EXPECT_EQ(other, b);
    ++failures;
  });
  f.net.SetHandler(b, [&](NodeId, const Bytes&) { ++delivered; });
  for (int i = 0; i < 20; ++i) f.net.Send(a, b, Bytes(5), "m");
  f.RunAll();
  EXPECT_GT(failures, 0);
  EXPECT_EQ(failures + delivered, 20);
}

TEST(Send, CrashedSenderDiscardsInFlight) {
  Fixture f(NetConfig{0, 0.0, 0.0, 0});
  const auto a = f.net.AddNode("a", {8e6, 8e6});
  const auto b = f.net.AddNode("b", {8e6, 8e6});
  int delivered = 0;
  f.net.SetHandler(b, [&](NodeId, const Bytes&) { ++delivered; });
  f.net.Send(a, b, Bytes(1000000), "big");  // upload completes at t = 1
  f.queue.Schedule(0.5, [&] { f.net.SetUp(a, false); });
  f.RunAll();
  EXPECT_EQ(delivered, 0);
  EXPECT_NE(f.trace.Text().find("discard big a->b"), std::string::npos);
}

TEST(Network, ConservationAndMonotoneTrace) {
  Fixture f(NetConfig{11, 0.03, 0.2, 3});
  std::vector<NodeId> ids;
  for (int i = 0; i < 5; ++i) ids.push_back(f.net.AddNode("n" + std::to_string(i), {5e6, 20e6}));
  SplitMix64 rng(2);
  for (int i = 0; i < 300; ++i) {
    const auto from = ids[rng.below(5)];
    const auto to = ids[rng.below(5)];
    const double t = rng.uniform() * 10;
    const auto size = rng.below(5000);
    f.queue.Schedule(t, [&f, from, to, size] { f.net.Send(from, to, Bytes(size), "r"); });
  }
  f.RunAll();
  EXPECT_LE(f.net.total_bytes_received(), f.net.total_bytes_sent());
  double prev = 0;
  for (const auto& line : f.trace.lines()) {
    const double t = TimeOf(line);
    ASSERT_GE(t, prev) << line;
    prev = t;
  }
}

TEST(Network, DeterministicTrace) {
  auto run = [] {
    Fixture f(NetConfig{77, 0.01, 0.25, 4});
    const auto a = f.net.AddNode("a", {3e6, 9e6});
    const auto b = f.net.AddNode("b", {7e6, 2e6});
    f.net.SetHandler(b, [&](NodeId, const Bytes& p) {
      if (p.size() > 1) f.net.Send(b, a, Bytes(p.size() / 2), "echo");
    });
    for (int i = 0; i < 50; ++i) f.net.Send(a, b, Bytes(100 * i + 1), "ping");
    f.RunAll();
    return f.trace.Text();
  };
  const auto t1 = run();
  EXPECT_FALSE(t1.empty());
  EXPECT_EQ(t1, run());
}

}  // namespace
}  // namespace swarm::netsim
