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

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "swarm/messages.hpp"
#include "swarm/tensor_codec.hpp"
#include "test_support.hpp"

namespace swarm::protocol {
namespace {

using swarm::testing::ErrorOf;

Contribution C(const std::string& id, std::uint64_t s, std::vector<float> g) {
  return {PeerId{id}, s, std::move(g)};
}

TEST(AccumulateLocal, CountsAndSumsAdd) {
  auto task = tasks::MakeLogReg(64, 5, 1);
  const std::vector<float> w{0.1f, -0.2f, 0.3f, 0.0f, 0.5f};
  const std::vector<std::size_t> a{1, 2, 3}, b{4, 5, 6, 7, 8};
  GradSum acc(5);
  AccumulateLocal(*task, w, a, acc);
  AccumulateLocal(*task, w, b, acc);
  EXPECT_EQ(acc.count, 8u);
  // Same samples in one call produce the same sum: per-sample gradients are
  // added one at a time in sample order either way.
  std::vector<std::size_t> ab(a);
  ab.insert(ab.end(), b.begin(), b.end());
  const auto once = AccumulateLocal(*task, w, ab);
  EXPECT_EQ(once.sum, acc.sum);
  EXPECT_EQ(ErrorOf([&] { AccumulateLocal(*task, w, std::vector<std::size_t>{}); }),
            ErrorCode::kEmptyRound);
}

TEST(AccumulateLocal, QuadraticClosedForm) {
  // Quadratic loss 1/2 ||w - w*||^2 has per-sample gradient w - w*.
  auto task = tasks::MakeQuadratic(std::vector<double>{1.0, 2.0});
  const std::vector<float> w{0.0f, 0.0f};
  const std::vector<std::size_t> batch{0, 0, 0};
  const auto acc = AccumulateLocal(*task, w, batch);
  EXPECT_EQ(acc.count, 3u);
  EXPECT_EQ(acc.sum, (std::vector<double>{-3.0, -6.0}));
  EXPECT_EQ(acc.Mean(), (std::vector<float>{-1.0f, -2.0f}));
}

TEST(ShouldTrigger, Boundary) {
  EXPECT_TRUE(ShouldTrigger(256, 256));
  EXPECT_FALSE(ShouldTrigger(255, 256));
  EXPECT_TRUE(ShouldTrigger(300, 256));
}

TEST(Aggregate, WeightedMeanArithmetic) {
  const std::vector<Contribution> cs{C("a", 1, {2}), C("b", 3, {6})};
  EXPECT_EQ(Aggregate(cs, {}), std::vector<float>{5});
}

TEST(Aggregate, SingleContributionUnchanged) {
  const std::vector<Contribution> cs{C("a", 7, {1.25f, -3.5f, 1e-3f})};
  EXPECT_EQ(Aggregate(cs, {}), cs[0].grad);
}

TEST(Aggregate, OrderIndependentBecausePeerSorted) {
  SplitMix64 rng(3);
  std::vector<Contribution> cs;
  for (int i = 0; i < 6; ++i) {
    std::vector<float> g(50);
    for (auto& x : g) x = static_cast<float>(rng.normal() * 1e3);
    cs.push_back(C("p" + std::to_string(i), 1 + rng.below(40), g));
  }
  const auto ref = Aggregate(cs, {});
  std::reverse(cs.begin(), cs.end());
  EXPECT_EQ(Aggregate(cs, {}), ref);
  std::rotate(cs.begin(), cs.begin() + 2, cs.end());
  EXPECT_EQ(Aggregate(cs, {}), ref);
}

TEST(Aggregate, TrimmedMeanWithinHonestRange) {
  SplitMix64 rng(5);
  const std::size_t dim = 200;
  std::vector<Contribution> cs;
  for (int i = 0; i < 5; ++i) {
    std::vector<float> g(dim);
    for (auto& x : g) x = static_cast<float>(rng.normal());
    cs.push_back(C("p" + std::to_string(i), 10 + rng.below(20), g));
  }
  for (auto& x : cs[2].grad) x *= 1000.0f;
  AggregationPolicy p{AggregationKind::kTrimmedMean, 1.0, 1};
  const auto out = Aggregate(cs, p);
  for (std::size_t j = 0; j < dim; ++j) {
    float lo = 1e30f, hi = -1e30f;
    for (int i = 0; i < 5; ++i) {
      if (i == 2) continue;
      lo = std::min(lo, cs[i].grad[j]);
      hi = std::max(hi, cs[i].grad[j]);
    }
    ASSERT_GE(out[j], lo) << j;
    ASSERT_LE(out[j], hi) << j;
  }
}

TEST(Aggregate, ClippedMeanBoundsNorms) {
  std::vector<Contribution> cs{C("a", 1, {3, 4}), C("b", 1, {0, 1}), C("c", 1, {300, 400})};
  AggregationPolicy p{AggregationKind::kClippedMean, 1.0, 0};
  // Median norm is 5: c is scaled to norm 5, a and b pass through.
  const auto out = Aggregate(cs, p);
  EXPECT_NEAR(out[0], (3 + 0 + 3) / 3.0, 1e-6);
  EXPECT_NEAR(out[1], (4 + 1 + 4) / 3.0, 1e-6);
}

TEST(Aggregate, Errors) {
  EXPECT_EQ(ErrorOf([] { Aggregate(std::vector<Contribution>{}, {}); }), ErrorCode::kEmptyRound);
  const std::vector<Contribution> cs{C("a", 1, {1, 2}), C("b", 1, {1})};
  EXPECT_EQ(ErrorOf([&] { Aggregate(cs, {}); }), ErrorCode::kShapeMismatch);
  const std::vector<Contribution> three{C("a", 1, {1}), C("b", 1, {2}), C("c", 1, {3})};
  AggregationPolicy p{AggregationKind::kTrimmedMean, 1.0, 1};
  EXPECT_EQ(ErrorOf([&] { Aggregate(three, p); }), ErrorCode::kInvalidPolicy);
  AggregationPolicy clip{AggregationKind::kClippedMean, 0.0, 0};
  EXPECT_EQ(ErrorOf([&] { Aggregate(three, clip); }), ErrorCode::kInvalidPolicy);
}

TEST(Aggregate, QuantizedPathWithinAveragedCodecBound) {
  SplitMix64 rng(8);
  std::vector<Contribution> exact, lossy;
  std::vector<std::vector<float>> scales;
  for (int i = 0; i < 4; ++i) {
    std::vector<float> g(10000);
    for (auto& x : g) x = static_cast<float>(rng.normal());
    const auto q = codec::QuantizeQ8(g, 4096);
    const std::uint64_t s = 5 + i;
    exact.push_back(C("p" + std::to_string(i), s, g));
    lossy.push_back(C("p" + std::to_string(i), s, codec::DequantizeQ8(q)));
    scales.push_back(q.scales);
  }
  const auto a = Aggregate(exact, {});
  const auto b = Aggregate(lossy, {});
  const double total = 5 + 6 + 7 + 8;
  for (std::size_t j = 0; j < a.size(); ++j) {
    double bound = 0;
    for (int i = 0; i < 4; ++i) bound += (5 + i) / total * scales[i][j / 4096] / 2;
    ASSERT_LE(std::abs(a[j] - b[j]), bound + 1e-6) << j;
  }
}

std::set<PeerId> Peers(std::initializer_list<const char*> ids) {
  std::set<PeerId> s;
  for (auto id : ids) s.insert(PeerId{id});
  return s;
}

TEST(RoundState, TriggerAndSlack) {
  RoundState r(0, 100, Peers({"a", "b"}));
  EXPECT_FALSE(r.ReportProgress(PeerId{"a"}, 40));
  EXPECT_FALSE(r.ReportProgress(PeerId{"b"}, 59));
  EXPECT_FALSE(r.ReportProgress(PeerId{"a"}, 30));  // counts never decrease
  EXPECT_EQ(r.Progress(), 99u);
  EXPECT_TRUE(r.ReportProgress(PeerId{"a"}, 41));
  r.BeginAggregation();
  EXPECT_EQ(r.phase(), Phase::kAggregating);
  EXPECT_EQ(r.ContributedSamples(), 100u);
  EXPECT_FALSE(r.AllReceived());
  r.MarkReceived(PeerId{"a"});
  r.MarkReceived(PeerId{"b"});
  EXPECT_TRUE(r.AllReceived());
  r.Advance(Phase::kStepping);
  EXPECT_THROW(r.Advance(Phase::kAggregating), Error);
  r.Advance(Phase::kDone);
}

TEST(RoundState, IgnoresStrangers) {
  RoundState r(0, 10, Peers({"a"}));
  EXPECT_FALSE(r.ReportProgress(PeerId{"mallory"}, 1000));
  EXPECT_EQ(r.Progress(), 0u);
}

TEST(HandlePeerFailure, CompletedContributionRetained) {
  RoundState r(1, 10, Peers({"a", "b"}));
  r.ReportProgress(PeerId{"a"}, 6);
  r.ReportProgress(PeerId{"b"}, 6);
  r.BeginAggregation();
  r.MarkReceived(PeerId{"a"});
  auto after = HandlePeerFailure(r, PeerId{"a"});
  EXPECT_TRUE(after.contributions().contains(PeerId{"a"}));
  EXPECT_EQ(after.ContributedSamples(), 12u);
  after = HandlePeerFailure(after, PeerId{"b"});
  EXPECT_FALSE(after.contributions().contains(PeerId{"b"}));
  EXPECT_EQ(after.ContributedSamples(), 6u);
  EXPECT_NE(after.phase(), Phase::kAborted);
}

TEST(HandlePeerFailure, BeforeUploadReducesProgress) {
  RoundState r(1, 10, Peers({"a", "b", "c"}));
  r.ReportProgress(PeerId{"a"}, 4);
  r.ReportProgress(PeerId{"b"}, 5);
  auto after = HandlePeerFailure(r, PeerId{"b"});
  EXPECT_EQ(after.Progress(), 4u);
  EXPECT_FALSE(after.ReportProgress(PeerId{"c"}, 5));
  EXPECT_TRUE(after.ReportProgress(PeerId{"c"}, 6));
}

TEST(HandlePeerFailure, AllFailAborts) {
  RoundState r(1, 10, Peers({"a", "b"}));
  r.ReportProgress(PeerId{"a"}, 4);
  auto after = HandlePeerFailure(HandlePeerFailure(r, PeerId{"a"}), PeerId{"b"});
  EXPECT_EQ(after.phase(), Phase::kAborted);
}

TEST(Authenticate, Allowlist) {
  Allowlist list({"t1", "t2"});
  EXPECT_EQ(Authenticate({PeerId{"a"}, "t1"}, list), AuthResult::kAccept);
  EXPECT_EQ(Authenticate({PeerId{"a"}, "t3"}, list), AuthResult::kReject);
  EXPECT_EQ(Authenticate({PeerId{"a"}, ""}, list), AuthResult::kReject);
}

TEST(Authenticate, LoadFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "swarm_allowlist_test.txt";
  {
    std::ofstream f(path);
    f << "# volunteers\n\n  alpha  \nbeta\n";
  }
  const auto list = Allowlist::Load(path.string());
  EXPECT_EQ(list.size(), 2u);
  EXPECT_TRUE(list.Contains("alpha"));
  EXPECT_FALSE(list.Contains("# volunteers"));
  std::filesystem::remove(path);
}

TEST(Ledger, AdditivityAndOrder) {
  Ledger l;
  l.Update(PeerId{"x"}, 5, 10);
  l.Update(PeerId{"x"}, 5, 20);
  EXPECT_EQ(l.entries().at(PeerId{"x"}).wall_seconds, 30.0);
  EXPECT_EQ(l.entries().at(PeerId{"x"}).samples, 10u);
  l.Update(PeerId{"y"}, 1, 20);
  l.Update(PeerId{"z"}, 1, 10);
  auto board = l.Leaderboard(10);
  ASSERT_EQ(board.size(), 3u);
  EXPECT_EQ(board[0].peer_id.value, "x");
  EXPECT_EQ(board[1].peer_id.value, "y");
  EXPECT_EQ(board[2].peer_id.value, "z");
  l.Update(PeerId{"a"}, 1, 10);
  board = l.Leaderboard(10);
  EXPECT_EQ(board[2].peer_id.value, "a");
  EXPECT_EQ(board[3].peer_id.value, "z");
  EXPECT_EQ(l.Leaderboard(2).size(), 2u);
}

TEST(Ledger, JsonRoundTrip) {
  Ledger l;
  l.Update(PeerId{"p1"}, 100, 1.5);
  l.Update(PeerId{"p2"}, 7, 0.25);
  const auto back = Ledger::FromJson(l.ToJson());
  EXPECT_EQ(back.ToJson(), l.ToJson());
  EXPECT_THROW(Ledger::FromJson("{\"peers\": 3"), Error);
}

TEST(Messages, RoundTripEveryType) {
  const std::vector<Message> msgs{
      JoinMsg{"peer-1", "tok", 12.5},
      JoinAckMsg{7, {1, 2, 3}, {4, 5}},
      ProgressMsg{3, 48},
      TriggerMsg{3, 2, {{"a", 10, 0, 5}, {"b", 6, 5, 20}}},
      ContribMsg{3, 2, 16, {9, 9, 9}},
      SliceMsg{3, 2, 16, 1.75, 5, {1}},
      GatherMsg{3, 2, 5, {2, 2}},
      StepDoneMsg{3, 0xdeadbeefcafef00dULL, 16, 0.5},
      LeaveMsg{},
      CommitMsg{3, 2},
  };
  for (const auto& m : msgs) {
    const auto frame = EncodeMessage(m);
    ASSERT_GE(frame.size(), 5u);
    std::uint32_t len;
    std::memcpy(&len, frame.data(), 4);
    EXPECT_EQ(len + 4, frame.size());
    EXPECT_EQ(frame[4], static_cast<std::uint8_t>(TypeOf(m)));
    EXPECT_EQ(DecodeMessage(frame), m) << MsgTypeName(TypeOf(m));
  }
}

TEST(Messages, RejectsGarbage) {
  auto frame = EncodeMessage(ProgressMsg{1, 2});
  auto bad = frame;
  bad[4] = 0xee;
  EXPECT_EQ(ErrorOf([&] { DecodeMessage(bad); }), ErrorCode::kMalformedMessage);
  bad = frame;
  bad.pop_back();
  EXPECT_EQ(ErrorOf([&] { DecodeMessage(bad); }), ErrorCode::kMalformedMessage);
  bad = frame;
  bad.push_back(0);
  EXPECT_EQ(ErrorOf([&] { DecodeMessage(bad); }), ErrorCode::kMalformedMessage);
}

}  // namespace
}  // namespace swarm::protocol
