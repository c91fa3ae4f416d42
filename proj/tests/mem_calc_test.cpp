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

#include "swarm/mem_calc.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "test_support.hpp"

namespace swarm::memcalc {
namespace {

using swarm::testing::ErrorOf;

// Independent layer-by-layer tally of a pre-norm transformer with biases,
// written out tensor by tensor.
std::uint64_t ToyTally(std::uint64_t L, std::uint64_t d, std::uint64_t V, std::uint64_t P,
                       std::uint64_t f, bool gated, bool tied) {
  std::uint64_t n = V * d + P * d;
  for (std::uint64_t l = 0; l < L; ++l) {
    n += 2 * d;                      // attention layer norm
    n += 4 * (d * d + d);            // q, k, v, o with biases
    n += 2 * d;                      // ffn layer norm
    n += d * f + f;                  // up projection
    if (gated) n += d * f + f;       // gate projection
    n += f * d + d;                  // down projection
  }
  n += 2 * d;                        // final norm
  if (!tied) n += V * d;
  return n;
}

TEST(EstimateParamCount, MatchesEnumerationOracle) {
  const ArchDims toy{2, 8, 2, 11, 5, 0, false, true, 0};
  EXPECT_EQ(EstimateParamCount(toy), ToyTally(2, 8, 11, 5, 32, false, true));
  const ArchDims gated{2, 6, 3, 7, 0, 10, true, false, 0};
  EXPECT_EQ(EstimateParamCount(gated), ToyTally(2, 6, 7, 0, 10, true, false));
  for (const auto& dims : {toy, gated}) {
    std::uint64_t sum = 0;
    for (const auto& t : EnumerateParams(dims)) sum += t.count;
    EXPECT_EQ(sum, EstimateParamCount(dims));
  }
}

TEST(EstimateParamCount, UnitDims) {
  // attention 4+4, norms 4, ffn 4+4+4+1, tied embedding 1, final norm 2.
  EXPECT_EQ(EstimateParamCount({1, 1, 1, 1, 0, 0, false, true, 0}), 28u);
}

TEST(EstimateParamCount, CrossAttentionLayers) {
  ArchDims a{4, 8, 2, 10, 0, 0, false, true, 0};
  ArchDims b = a;
  b.cross_attention_layers = 2;
  EXPECT_EQ(EstimateParamCount(b) - EstimateParamCount(a), 2u * (4 * 64 + 4 * 8 + 2 * 8));
  std::uint64_t sum = 0;
  for (const auto& t : EnumerateParams(b)) sum += t.count;
  EXPECT_EQ(sum, EstimateParamCount(b));
}

TEST(EstimateParamCount, SixtyFourLayerConfigNearOnePointOneBillion) {
  // 64 layers of width 1024, 16 heads, GEGLU feed-forward, embeddings tied
  // over 16384 text and 8192 image tokens, rotary positions.
  const ArchDims dalle{64, 1024, 16, 16384 + 8192, 0, 4096, true, true, 0};
  const auto n = EstimateParamCount(dalle);
  EXPECT_EQ(n, 1100023808u);
  EXPECT_LE(std::abs(static_cast<double>(n) - 1.1e9) / 1.1e9, 0.15);
}

TEST(EstimateParamCount, Gpt2LargeExact) {
  EXPECT_EQ(EstimateParamCount(FindPreset("gpt2-large").arch.value()), 774030080u);
}

TEST(Presets, PublishedCountsWithinFivePercentOfArchitecture) {
  ASSERT_GE(Presets().size(), 6u);
  for (const auto& p : Presets()) {
    p.Validate();
    ASSERT_TRUE(p.param_count && p.arch) << p.name;
    const double est = static_cast<double>(EstimateParamCount(*p.arch));
    EXPECT_LE(std::abs(est - *p.param_count) / *p.param_count, 0.05) << p.name << " " << est;
  }
  EXPECT_EQ(ErrorOf([] { FindPreset("gpt5"); }), ErrorCode::kInvalidConfig);
}

TEST(StoredParams, Sharing) {
  EXPECT_EQ(StoredParams(1'100'000'000, 8), 137'500'000u);
  EXPECT_EQ(StoredParams(12345, 1), 12345u);
  EXPECT_EQ(StoredParams(12345, 12345), 1u);
  EXPECT_EQ(StoredParams(10, 3), 4u);
  EXPECT_EQ(ErrorOf([] { StoredParams(10, 0); }), ErrorCode::kInvalidConfig);
}

TEST(MemoryReport, Gpt2LargeOptimizerState) {
  const auto& p = FindPreset("gpt2-large");
  const auto fp32 = ComputeMemoryReport(p, {32, false, false, 1}, 1, 1024);
  EXPECT_EQ(fp32.param_count, 774'000'000u);
  EXPECT_EQ(fp32.device.optimizer_state, 6'192'000'000u);
  EXPECT_EQ(fp32.device.weights, 3'096'000'000u);
  EXPECT_EQ(fp32.device.gradients, 3'096'000'000u);

  const auto q8 = ComputeMemoryReport(p, {8, false, false, 1}, 1, 1024);
  EXPECT_EQ(q8.device.optimizer_state, 1'548'000'000u + 8u * 188'965u);
  EXPECT_EQ(q8.device.optimizer_state, 1'549'511'720u);

  const auto off = ComputeMemoryReport(p, {8, true, false, 1}, 1, 1024);
  EXPECT_EQ(off.device.optimizer_state, 0u);
  EXPECT_EQ(off.host.offloaded_state, q8.device.optimizer_state);
  EXPECT_EQ(off.total, q8.total);
  EXPECT_EQ(q8.device_total - off.device_total, q8.device.optimizer_state);
}

TEST(MemoryReport, ActivationFormula) {
  const auto& p = FindPreset("gpt2-large");
  const auto plain = ComputeMemoryReport(p, {}, 2, 512);
  EXPECT_EQ(plain.device.activations, 36u * 2 * 512 * 1280 * 2 * 17);
  const auto ck = ComputeMemoryReport(p, {32, false, true, 1}, 2, 512);
  EXPECT_EQ(ck.device.activations, (6u + 1) * 2 * 512 * 1280 * 2 * 17);
  MemoryConstants c;
  c.act_bytes = 4;
  c.c_act = 10;
  EXPECT_EQ(ComputeMemoryReport(p, {}, 1, 1, c).device.activations, 36u * 1280 * 40);
}

TEST(MemoryReport, TotalsAreSums) {
  for (const auto& p : Presets()) {
    const auto r = ComputeMemoryReport(p, {8, true, true, 4}, 4, 256);
    EXPECT_EQ(r.device_total,
              r.device.weights + r.device.gradients + r.device.optimizer_state + r.device.activations);
    EXPECT_EQ(r.host_total, r.host.offloaded_state);
    EXPECT_EQ(r.total, r.device_total + r.host_total);
  }
}

TEST(MemoryReport, EachTechniqueNeverIncreasesDeviceTotal) {
  const std::vector<std::uint64_t> layer_counts{1, 2, 3, 7, 24, 96};
  for (std::uint64_t L : layer_counts) {
    ModelPreset p{"toy", std::nullopt, ArchDims{L, 64, 4, 1000, 128, 0, false, true, 0}, "test"};
    for (int mask = 0; mask < 16; ++mask) {
      const TechniqueFlags base{(mask & 1) ? 8u : 32u, (mask & 2) != 0, (mask & 4) != 0,
                                (mask & 8) ? 3u : 1u};
      const auto b = ComputeMemoryReport(p, base, 2, 64).device_total;
      auto t = base;
      t.optimizer_bits = 8;
      EXPECT_LE(ComputeMemoryReport(p, t, 2, 64).device_total, b) << L << " " << mask;
      t = base;
      t.offload = true;
      EXPECT_LE(ComputeMemoryReport(p, t, 2, 64).device_total, b) << L << " " << mask;
      t = base;
      t.checkpointing = true;
      EXPECT_LE(ComputeMemoryReport(p, t, 2, 64).device_total, b) << L << " " << mask;
      t = base;
      t.sharing_factor = base.sharing_factor * 2;
      EXPECT_LE(ComputeMemoryReport(p, t, 2, 64).device_total, b) << L << " " << mask;
    }
  }
}

TEST(MemoryReport, EightBitRatioAndSharingDivision) {
  for (std::uint64_t n : {1ull, 4095ull, 4096ull, 1'000'003ull, 774'000'000ull}) {
    const double ratio = static_cast<double>(OptimizerStateBytes(n, 8)) / OptimizerStateBytes(n, 32);
    EXPECT_DOUBLE_EQ(ratio, (2.0 * n + 8.0 * std::ceil(n / 4096.0)) / (8.0 * n));
  }
  const auto& p = FindPreset("bert-large");
  const auto one = ComputeMemoryReport(p, {}, 1, 128);
  const auto four = ComputeMemoryReport(p, {32, false, false, 4}, 1, 128);
  EXPECT_EQ(four.device.weights, 4 * ((one.param_count + 3) / 4));
}

TEST(MemoryReport, JsonFieldNames) {
  const auto r = ComputeMemoryReport(FindPreset("gpt2-large"), {8, true, true, 1}, 1, 1024);
  const auto j = nlohmann::json::parse(r.ToJson());
  EXPECT_EQ(j.at("preset"), "gpt2-large");
  EXPECT_EQ(j.at("device").at("optimizer_state"), 0);
  EXPECT_EQ(j.at("host").at("offloaded_state"), r.host.offloaded_state);
  EXPECT_EQ(j.at("totals").at("total"), r.total);
  for (const char* k : {"weights", "gradients", "optimizer_state", "activations"}) {
    EXPECT_TRUE(j.at("device").contains(k)) << k;
  }
}

TEST(MemoryReport, InputValidation) {
  const auto& p = FindPreset("gpt2-large");
  EXPECT_EQ(ErrorOf([&] { ComputeMemoryReport(p, {16, false, false, 1}, 1, 1); }),
            ErrorCode::kInvalidConfig);
  EXPECT_EQ(ErrorOf([&] { ComputeMemoryReport(p, {}, 0, 1); }), ErrorCode::kInvalidConfig);
  ModelPreset huge{"huge", std::nullopt, ArchDims{1u << 20, 1u << 20, 1, 1u << 20, 0, 0, false, true, 0},
                   "overflow"};
  EXPECT_EQ(ErrorOf([&] { ComputeMemoryReport(huge, {}, 1u << 20, 1u << 20); }),
            ErrorCode::kInvalidConfig);
}

}  // namespace
}  // namespace swarm::memcalc
