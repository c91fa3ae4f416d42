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

#include "swarm/optimizers.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "swarm/desk_tasks.hpp"
#include "swarm/error.hpp"
#include "swarm/random.hpp"

namespace swarm::optim {
namespace {

ScheduleConfig DefaultSchedule() { return ScheduleConfig{31250, 0.1, 2.5e-3, 0.0}; }

double Dist(std::span<const float> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

TEST(Schedule, Anchors) {
  const auto s = DefaultSchedule();
  EXPECT_EQ(s.warmup_steps(), 3125u);
  EXPECT_EQ(LrAt(0, s), 0.0);
  EXPECT_EQ(LrAt(3125, s), 2.5e-3);
  EXPECT_EQ(LrAt(31250, s), 0.0);
  EXPECT_NEAR(LrAt(17188, s), 1.2499555555555556e-3, 1e-15);
}

TEST(Schedule, PeakAttainedOnce) {
  const auto s = DefaultSchedule();
  int hits = 0;
  for (std::uint64_t t = 0; t <= s.total_steps; ++t) hits += LrAt(t, s) == s.peak_lr;
  EXPECT_EQ(hits, 1);
}

TEST(Schedule, ContinuousAndPiecewiseLinear) {
  ScheduleConfig s{1000, 0.25, 1.0, 0.1};
  for (std::uint64_t t = 1; t <= 1000; ++t) {
    EXPECT_LE(std::abs(LrAt(t, s) - LrAt(t - 1, s)), 1.0 / 250 + 1e-12) << t;
  }
  // Second differences vanish away from the kink.
  for (std::uint64_t t = 1; t < 1000; ++t) {
    if (t == 250) continue;
    const double d2 = LrAt(t + 1, s) - 2 * LrAt(t, s) + LrAt(t - 1, s);
    EXPECT_NEAR(d2, 0.0, 1e-12) << t;
  }
}

TEST(Schedule, Errors) {
  const auto s = DefaultSchedule();
  try {
    LrAt(31251, s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kStepOutOfRange);
  }
  ScheduleConfig bad = s;
  bad.peak_lr = 0;
  EXPECT_THROW(bad.Validate(), Error);
  bad = s;
  bad.warmup_fraction = 1.5;
  EXPECT_THROW(bad.Validate(), Error);
}

TEST(Schedule, ZeroWarmupStartsAtPeak) {
  ScheduleConfig s{10, 0.0, 0.5, 0.0};
  EXPECT_EQ(LrAt(0, s), 0.5);
  EXPECT_EQ(LrAt(10, s), 0.0);
}

TEST(Adam, ScalarFirstStep) {
  std::vector<float> w{0.0f};
  const std::vector<float> g{1.0f};
  auto st = OptimState::Zeros(1);
  AdamStep(w, g, st, OptimConfig::Adam(), 0.1);
  // -0.1 / (1 + 1e-8) rounds to -0.1f in single precision.
  EXPECT_FLOAT_EQ(w[0], -0.0999999999f);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, ZeroGradientLeavesWeights) {
  std::vector<float> w{1.5f, -2.0f, 3.25f};
  const auto before = w;
  auto st = OptimState::Zeros(3);
  AdamStep(w, std::vector<float>(3, 0.0f), st, OptimConfig::Adam(), 0.1);
  EXPECT_EQ(w, before);
}

TEST(Adam, ErrorsOnShapeAndNonFinite) {
  std::vector<float> w(3, 0.0f);
  auto st = OptimState::Zeros(3);
  try {
    AdamStep(w, std::vector<float>(2, 0.0f), st, OptimConfig::Adam(), 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
  std::vector<float> g{0.0f, std::numeric_limits<float>::quiet_NaN(), 0.0f};
  try {
    AdamStep(w, g, st, OptimConfig::Adam(), 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFiniteGradient);
  }
}

// Plain double-precision Adam used as an oracle.
struct RefAdam {
  std::vector<double> m, v;
  int t = 0;
  void Step(std::vector<double>& w, const std::vector<double>& g, double lr, double b1, double b2,
            double eps) {
    if (m.empty()) m.assign(w.size(), 0), v.assign(w.size(), 0);
    ++t;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      w[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
};

TEST(Adam, QuadraticConvergesAndTracksReference) {
  auto task = tasks::MakeQuadratic(16, 3);
  const auto opt = *task->Optimum();
  std::vector<float> w(16, 0.0f);
  std::vector<double> wr(16, 0.0);
  auto st = OptimState::Zeros(16);
  RefAdam ref;
  const ScheduleConfig sched{500, 0.1, 0.1, 0.0};
  for (std::uint64_t t = 0; t < 500; ++t) {
    std::vector<float> g(16);
    std::vector<double> gr(16);
    for (int i = 0; i < 16; ++i) {
      g[i] = w[i] - static_cast<float>(opt[i]);
      gr[i] = wr[i] - opt[i];
    }
    const double lr = LrAt(t + 1, sched);
    AdamStep(w, g, st, OptimConfig::Adam(), lr);
    ref.Step(wr, gr, lr, 0.9, 0.999, 1e-8);
  }
  EXPECT_LT(Dist(w, opt), 1e-3);
  EXPECT_LT(Dist(w, wr), 1e-4);
}

TEST(Adam, Deterministic) {
  auto run = [] {
    std::vector<float> w(50, 0.5f);
    auto st = OptimState::Zeros(50);
    SplitMix64 rng(4);
    for (int t = 0; t < 20; ++t) {
      std::vector<float> g(50);
      for (auto& x : g) x = static_cast<float>(rng.normal());
      AdamStep(w, g, st, OptimConfig::Adam(), 0.01);
    }
    return w;
  };
  EXPECT_EQ(run(), run());
}

TEST(Lamb, ScalarHandArithmetic) {
  std::vector<float> w{1.0f};
  auto st = OptimState::Zeros(1);
  auto cfg = OptimConfig::Lamb();
  cfg.beta1 = 0;
  cfg.beta2 = 0;
  LambStep(w, std::vector<float>{1.0f}, st, cfg, 0.1);
  EXPECT_NEAR(w[0], 0.9, 1e-7);
}

TEST(Lamb, ZeroNormConvention) {
  EXPECT_EQ(TrustRatio(0.0, 5.0, {0.0, 10.0}), 1.0);
  EXPECT_EQ(TrustRatio(3.0, 0.0, {0.0, 10.0}), 1.0);
  EXPECT_EQ(TrustRatio(3.0, 1.0, {0.0, 10.0}), 3.0);
  EXPECT_EQ(TrustRatio(30.0, 1.0, {0.0, 10.0}), 10.0);
  EXPECT_EQ(TrustRatio(1.0, 100.0, {0.5, 10.0}), 0.5);
  // Scaling the weight norm by c scales the unclipped ratio by c.
  for (double c : {0.5, 2.0, 3.0}) EXPECT_EQ(TrustRatio(1.5 * c, 2.0, {0, 1e9}), 0.75 * c);
}

TEST(Lamb, ZeroWeightLayerUsesUnitRatio) {
  std::vector<float> w{0.0f, 0.0f};
  auto st = OptimState::Zeros(2);
  auto cfg = OptimConfig::Lamb();
  cfg.beta1 = 0;
  cfg.beta2 = 0;
  LambStep(w, std::vector<float>{2.0f, -3.0f}, st, cfg, 0.1);
  EXPECT_NEAR(w[0], -0.1, 1e-7);
  EXPECT_NEAR(w[1], 0.1, 1e-7);
}

TEST(Lamb, UnitClipMatchesAdamWithDecoupledDecay) {
  SplitMix64 rng(8);
  std::vector<float> w0(40), g(40);
  for (auto& x : w0) x = static_cast<float>(rng.normal());
  for (auto& x : g) x = static_cast<float>(rng.normal());
  auto lamb_cfg = OptimConfig::Lamb();
  lamb_cfg.trust_clip = {1.0, 1.0};
  auto adam_cfg = lamb_cfg;
  adam_cfg.algorithm = Algorithm::kAdam;
  lamb_cfg.weight_decay = adam_cfg.weight_decay = 0.01;
  auto wl = w0, wa = w0;
  auto sl = OptimState::Zeros(40), sa = OptimState::Zeros(40);
  for (int t = 0; t < 5; ++t) {
    LambStep(wl, g, sl, lamb_cfg, 0.01);
    AdamStep(wa, g, sa, adam_cfg, 0.01);
  }
  for (int i = 0; i < 40; ++i) EXPECT_NEAR(wl[i], wa[i], 1e-6) << i;
}

TEST(Lamb, LayersNormalizedIndependently) {
  // Two layers with identical gradients but weights scaled by 4 take steps
  // scaled by 4.
  std::vector<float> w{1.0f, 2.0f, 4.0f, 8.0f};
  const std::vector<float> g{0.5f, -0.25f, 0.5f, -0.25f};
  const std::vector<LayerSlice> layers{{"a", 0, 2}, {"b", 2, 2}};
  auto st = OptimState::Zeros(4);
  auto before = w;
  LambStep(w, g, st, OptimConfig::Lamb(), 0.01, layers);
  for (int i = 0; i < 2; ++i) {
    EXPECT_NEAR((before[i + 2] - w[i + 2]), 4 * (before[i] - w[i]), 1e-6);
  }
}

TEST(Lamb, QuadraticLossNonIncreasing) {
  auto task = tasks::MakeQuadratic(30, 5);
  const auto opt = *task->Optimum();
  for (Algorithm alg : {Algorithm::kAdam, Algorithm::kLamb}) {
    auto cfg = alg == Algorithm::kAdam ? OptimConfig::Adam() : OptimConfig::Lamb();
    cfg.trust_clip = {0.0, 1.0};
    std::vector<float> w(30, 0.0f);
    auto st = OptimState::Zeros(30);
    double prev = task->MeanLoss(std::span<const float>(w));
    for (int t = 0; t < 200; ++t) {
      std::vector<float> g(30);
      for (int i = 0; i < 30; ++i) g[i] = w[i] - static_cast<float>(opt[i]);
      if (alg == Algorithm::kAdam) {
        AdamStep(w, g, st, cfg, 1e-3);
      } else {
        LambStep(w, g, st, cfg, 1e-3);
      }
      const double loss = task->MeanLoss(std::span<const float>(w));
      ASSERT_LE(loss, prev + 1e-12) << t;
      prev = loss;
    }
  }
}

TEST(PackState, ZeroStateRoundTrip) {
  auto st = OptimState::Zeros(5000, StateBits::k8);
  EXPECT_EQ(st.bits, StateBits::k8);
  for (float s : st.m_q.scales) EXPECT_EQ(s, 0.0f);
  const auto un = UnpackState(st);
  EXPECT_EQ(un.m, std::vector<float>(5000, 0.0f));
  EXPECT_EQ(un.v, std::vector<float>(5000, 0.0f));
}

TEST(PackState, RandomStateWithinCodecBound) {
  SplitMix64 rng(12);
  auto st = OptimState::Zeros(10000);
  for (auto& x : st.m) x = static_cast<float>(rng.normal());
  for (auto& x : st.v) x = static_cast<float>(rng.uniform() * 4);
  const auto packed = PackState(st, StateBits::k8);
  const auto un = UnpackState(packed);
  for (std::size_t i = 0; i < st.m.size(); ++i) {
    const double sm = packed.m_q.scales[i / 4096];
    const double sv = packed.v_sqrt_q.scales[i / 4096];
    ASSERT_LE(std::abs(st.m[i] - un.m[i]), sm / 2) << i;
    ASSERT_LE(std::abs(std::sqrt(st.v[i]) - std::sqrt(un.v[i])), sv / 2 + 1e-6) << i;
    ASSERT_GE(un.v[i], 0.0f);
  }
  // Packing the unpacked state reproduces the same encoded bytes.
  const auto again = PackState(un, StateBits::k8);
  EXPECT_EQ(again.m_q.payload, packed.m_q.payload);
  EXPECT_EQ(again.m_q.scales, packed.m_q.scales);
  EXPECT_EQ(again.v_sqrt_q.payload, packed.v_sqrt_q.payload);
  EXPECT_EQ(again.v_sqrt_q.scales, packed.v_sqrt_q.scales);
}

TEST(TierTransfer, ByteAccounting) {
  auto st = OptimState::Zeros(1000);
  TierTransfer(st, TransferDirection::kOffload);
  EXPECT_EQ(st.tier, Tier::kOffloaded);
  EXPECT_EQ(st.transfer_bytes_accumulated, 8000u);

  auto q = OptimState::Zeros(1000, StateBits::k8);
  TierTransfer(q, TransferDirection::kOffload);
  EXPECT_EQ(q.transfer_bytes_accumulated, 2000u + 2 * 4);

  SplitMix64 rng(2);
  auto r = OptimState::Zeros(100);
  for (auto& x : r.m) x = static_cast<float>(rng.normal());
  const auto m0 = r.m;
  TierTransfer(r, TransferDirection::kOffload);
  TierTransfer(r, TransferDirection::kFetch);
  EXPECT_EQ(r.m, m0);
  EXPECT_EQ(r.tier, Tier::kCompute);
  EXPECT_EQ(r.transfer_bytes_accumulated, 1600u);
}

TEST(Optimizer, OffloadedStepsAccountTwoTransfersEach) {
  auto cfg = OptimConfig::Adam();
  cfg.state_tier = Tier::kOffloaded;
  Optimizer opt(cfg, 10);
  std::vector<float> w(10, 0.0f), g(10, 1.0f);
  opt.Step(w, g, 0.1);
  opt.Step(w, g, 0.1);
  EXPECT_EQ(opt.state().transfer_bytes_accumulated, 4u * 80u);
  EXPECT_EQ(opt.state().tier, Tier::kOffloaded);
}

TEST(Optimizer, EightBitLambTracksFp32) {
  auto task = tasks::MakeQuadratic(100, 42);
  const auto opt = *task->Optimum();
  const ScheduleConfig sched{500, 0.1, 0.05, 0.0};
  auto run = [&](StateBits bits) {
    auto cfg = OptimConfig::Lamb();
    cfg.state_bits = bits;
    Optimizer o(cfg, 100);
    std::vector<float> w(100, 0.0f);
    for (std::uint64_t t = 0; t < 500; ++t) {
      std::vector<float> g(100);
      for (int i = 0; i < 100; ++i) g[i] = w[i] - static_cast<float>(opt[i]);
      o.Step(w, g, LrAt(t + 1, sched));
    }
    return w;
  };
  const auto w32 = run(StateBits::k32);
  const auto w8 = run(StateBits::k8);
  std::vector<double> w32d(w32.begin(), w32.end());
  double norm32 = 0;
  for (float x : w32) norm32 += x * x;
  EXPECT_LE(Dist(w8, w32d) / std::sqrt(norm32), 1e-2);
  EXPECT_LE(Dist(w32, opt), 1e-3);
  EXPECT_LE(Dist(w8, opt), 1e-3);
}

TEST(Checkpoint, RoundTripResumesIdentically) {
  for (StateBits bits : {StateBits::k32, StateBits::k8}) {
    auto cfg = OptimConfig::Lamb();
    cfg.state_bits = bits;
    cfg.weight_decay = 0.01;
    Optimizer a(cfg, 300);
    SplitMix64 rng(6);
    std::vector<float> w(300, 0.1f);
    auto grad = [&] {
      std::vector<float> g(300);
      for (auto& x : g) x = static_cast<float>(rng.normal());
      return g;
    };
    for (int t = 0; t < 3; ++t) a.Step(w, grad(), 0.01);
    const auto bytes = a.SaveCheckpoint();
    ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "TOPT");
    auto b = Optimizer::LoadCheckpoint(bytes);
    EXPECT_EQ(b.state().step, 3u);
    EXPECT_EQ(b.SaveCheckpoint(), bytes);
    auto wa = w, wb = w;
    const auto g = grad();
    a.Step(wa, g, 0.01);
    b.Step(wb, g, 0.01);
    EXPECT_EQ(wa, wb);
  }
}

TEST(Checkpoint, CorruptInputRejected) {
  Optimizer a(OptimConfig::Adam(), 10);
  auto bytes = a.SaveCheckpoint();
  bytes[0] = 'X';
  EXPECT_THROW(Optimizer::LoadCheckpoint(bytes), Error);
  bytes = a.SaveCheckpoint();
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(Optimizer::LoadCheckpoint(bytes), Error);
}

}  // namespace
}  // namespace swarm::optim
