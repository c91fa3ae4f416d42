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

#include <algorithm>
#include <cmath>
#include <string>

#include "swarm/error.hpp"
#include "swarm/wire.hpp"

namespace swarm::optim {
namespace {

constexpr char kCheckpointMagic[] = "TOPT";
constexpr std::uint16_t kCheckpointVersion = 1;

void CheckStep(std::span<const float> w, std::span<const float> g,
               const OptimState& st) {
  if (w.size() != g.size() || w.size() != st.num_params) {
    throw Error(ErrorCode::kShapeMismatch,
                "params " + std::to_string(w.size()) + ", grads " +
                    std::to_string(g.size()) + ", state " +
                    std::to_string(st.num_params));
  }
  if (st.bits != StateBits::k32) {
    throw Error(ErrorCode::kInvalidConfig, "optimizer step needs unpacked state");
  }
  for (float x : g) {
    if (!std::isfinite(x)) throw Error(ErrorCode::kNonFiniteGradient, "gradient not finite");
  }
}

// Updates the moments in place and returns the bias corrections.
std::pair<double, double> UpdateMoments(std::span<const float> g, OptimState& st,
                                        const OptimConfig& cfg) {
  st.step += 1;
  const double b1 = cfg.beta1;
  const double b2 = cfg.beta2;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double gi = g[i];
    st.m[i] = static_cast<float>(b1 * st.m[i] + (1.0 - b1) * gi);
    st.v[i] = static_cast<float>(b2 * st.v[i] + (1.0 - b2) * gi * gi);
  }
  const double t = static_cast<double>(st.step);
  return {1.0 - std::pow(b1, t), 1.0 - std::pow(b2, t)};
}

}  // namespace

void ScheduleConfig::Validate() const {
  if (total_steps < 1) throw Error(ErrorCode::kInvalidConfig, "total_steps < 1");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "warmup_fraction outside [0, 1]");
  }
  if (!(peak_lr > 0.0)) throw Error(ErrorCode::kInvalidConfig, "peak_lr <= 0");
  if (!(end_lr >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "end_lr < 0");
}

std::uint64_t ScheduleConfig::warmup_steps() const {
  return static_cast<std::uint64_t>(
      std::llround(warmup_fraction * static_cast<double>(total_steps)));
}

double LrAt(std::uint64_t step, const ScheduleConfig& s) {
  s.Validate();
  if (step > s.total_steps) {
    throw Error(ErrorCode::kStepOutOfRange,
                "step " + std::to_string(step) + " > total " + std::to_string(s.total_steps));
  }
  const std::uint64_t w = s.warmup_steps();
  if (step == w) return s.peak_lr;
  if (step == s.total_steps) return s.end_lr;
  // Extended precision keeps the result within one rounding of the exact
  // line.
  using Wide = long double;
  if (step < w) {
    return static_cast<double>(Wide(s.peak_lr) * Wide(step) / Wide(w));
  }
  const Wide remaining = Wide(s.total_steps - step) / Wide(s.total_steps - w);
  return static_cast<double>(Wide(s.end_lr) + (Wide(s.peak_lr) - Wide(s.end_lr)) * remaining);
}

OptimConfig OptimConfig::Adam() { return OptimConfig{}; }

OptimConfig OptimConfig::Lamb() {
  OptimConfig c;
  c.algorithm = Algorithm::kLamb;
  c.beta2 = 0.95;
  return c;
}

void OptimConfig::Validate() const {
  auto bad = [](const char* m) { throw Error(ErrorCode::kInvalidConfig, m); };
  if (!(beta1 >= 0.0 && beta1 < 1.0)) bad("beta1 outside [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) bad("beta2 outside [0, 1)");
  if (!(epsilon > 0.0)) bad("epsilon <= 0");
  if (!(trust_clip.first <= trust_clip.second)) bad("trust_clip min > max");
  if (state_bits != StateBits::k32 && state_bits != StateBits::k8) bad("state_bits not 32 or 8");
  if (block_size < 1) bad("block_size < 1");
}

OptimState OptimState::Zeros(std::size_t n, StateBits bits, std::uint32_t block_size) {
  OptimState st;
  st.num_params = n;
  st.block_size = block_size;
  st.m.assign(n, 0.0f);
  st.v.assign(n, 0.0f);
  return bits == StateBits::k8 ? PackState(st, StateBits::k8) : st;
}

std::uint64_t OptimState::StateBytes() const {
  if (bits == StateBits::k32) return 8ull * num_params;
  return m_q.payload.size() + 4ull * m_q.scales.size() + v_sqrt_q.payload.size() +
         4ull * v_sqrt_q.scales.size();
}

OptimState PackState(const OptimState& st, StateBits bits) {
  if (bits == st.bits) return st;
  if (bits == StateBits::k32) return UnpackState(st);
  OptimState out = st;
  out.bits = StateBits::k8;
  out.m_q = codec::QuantizeQ8(st.m, st.block_size);
  std::vector<float> root(st.v.size());
  for (std::size_t i = 0; i < root.size(); ++i) root[i] = std::sqrt(std::max(st.v[i], 0.0f));
  out.v_sqrt_q = codec::QuantizeQ8(root, st.block_size);
  out.m.clear();
  out.m.shrink_to_fit();
  out.v.clear();
  out.v.shrink_to_fit();
  return out;
}

OptimState UnpackState(const OptimState& st) {
  if (st.bits == StateBits::k32) return st;
  if (st.m_q.num_elements != st.num_params || st.v_sqrt_q.num_elements != st.num_params) {
    throw Error(ErrorCode::kMalformedChunk, "state chunk length does not match parameter count");
  }
  OptimState out = st;
  out.bits = StateBits::k32;
  out.m = codec::DequantizeQ8(st.m_q);
  out.v = codec::DequantizeQ8(st.v_sqrt_q);
  for (float& x : out.v) x = x * x;
  out.m_q = {};
  out.v_sqrt_q = {};
  return out;
}

void TierTransfer(OptimState& st, TransferDirection direction) {
  const Tier target = direction == TransferDirection::kOffload ? Tier::kOffloaded : Tier::kCompute;
  if (st.tier == target) return;
  st.tier = target;
  st.transfer_bytes_accumulated += st.StateBytes();
}

void AdamStep(std::span<float> w, std::span<const float> g, OptimState& st,
              const OptimConfig& cfg, double lr) {
  CheckStep(w, g, st);
  const auto [c1, c2] = UpdateMoments(g, st, cfg);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double mhat = st.m[i] / c1;
    const double vhat = st.v[i] / c2;
    const double wi = w[i];
    w[i] = static_cast<float>(wi - lr * mhat / (std::sqrt(vhat) + cfg.epsilon) -
                              lr * cfg.weight_decay * wi);
  }
}

double TrustRatio(double w_norm, double r_norm, std::pair<double, double> clip) {
  if (w_norm == 0.0 || r_norm == 0.0) return 1.0;
  return std::clamp(w_norm / r_norm, clip.first, clip.second);
}

void LambStep(std::span<float> w, std::span<const float> g, OptimState& st,
              const OptimConfig& cfg, double lr, std::span<const LayerSlice> layers) {
  CheckStep(w, g, st);
  const LayerSlice whole{"all", 0, w.size()};
  if (layers.empty()) layers = std::span<const LayerSlice>(&whole, 1);
  for (const auto& layer : layers) {
    if (layer.offset + layer.size > w.size()) {
      throw Error(ErrorCode::kShapeMismatch, "layer '" + layer.name + "' out of range");
    }
  }
  const auto [c1, c2] = UpdateMoments(g, st, cfg);
  std::vector<double> r;
  for (const auto& layer : layers) {
    r.resize(layer.size);
    double w_sq = 0.0;
    double r_sq = 0.0;
    for (std::size_t k = 0; k < layer.size; ++k) {
      const std::size_t i = layer.offset + k;
      const double mhat = st.m[i] / c1;
      const double vhat = st.v[i] / c2;
      r[k] = mhat / (std::sqrt(vhat) + cfg.epsilon) + cfg.weight_decay * w[i];
      w_sq += static_cast<double>(w[i]) * w[i];
      r_sq += r[k] * r[k];
    }
    const double ratio = TrustRatio(std::sqrt(w_sq), std::sqrt(r_sq), cfg.trust_clip);
    for (std::size_t k = 0; k < layer.size; ++k) {
      const std::size_t i = layer.offset + k;
      w[i] = static_cast<float>(w[i] - lr * ratio * r[k]);
    }
  }
}

Optimizer::Optimizer(OptimConfig cfg, std::size_t num_params, std::vector<LayerSlice> layers)
    : cfg_(cfg), layers_(std::move(layers)) {
  cfg_.Validate();
  state_ = OptimState::Zeros(num_params, cfg_.state_bits, cfg_.block_size);
  state_.tier = cfg_.state_tier;
}

void Optimizer::Step(std::span<float> w, std::span<const float> g, double lr) {
  const bool offloaded = cfg_.state_tier == Tier::kOffloaded;
  if (offloaded) TierTransfer(state_, TransferDirection::kFetch);
  OptimState work = UnpackState(state_);
  if (cfg_.algorithm == Algorithm::kAdam) {
    AdamStep(w, g, work, cfg_, lr);
  } else {
    LambStep(w, g, work, cfg_, lr, layers_);
  }
  state_ = PackState(work, cfg_.state_bits);
  if (offloaded) TierTransfer(state_, TransferDirection::kOffload);
}

std::vector<std::uint8_t> Optimizer::SaveCheckpoint() const {
  ByteWriter w;
  w.tag({kCheckpointMagic, 4});
  w.u16(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(cfg_.algorithm));
  w.u8(static_cast<std::uint8_t>(cfg_.state_bits));
  w.u8(static_cast<std::uint8_t>(cfg_.state_tier));
  w.u8(0);
  w.f64(cfg_.beta1);
  w.f64(cfg_.beta2);
  w.f64(cfg_.epsilon);
  w.f64(cfg_.weight_decay);
  w.f64(cfg_.trust_clip.first);
  w.f64(cfg_.trust_clip.second);
  w.u32(cfg_.block_size);
  w.u64(state_.step);
  w.u64(state_.num_params);
  if (state_.bits == StateBits::k8) {
    codec::SerializeInto(state_.m_q, &w.out());
    codec::SerializeInto(state_.v_sqrt_q, &w.out());
  } else {
    codec::SerializeInto(codec::EncodeF32(state_.m), &w.out());
    codec::SerializeInto(codec::EncodeF32(state_.v), &w.out());
  }
  return w.take();
}

Optimizer Optimizer::LoadCheckpoint(std::span<const std::uint8_t> bytes,
                                    std::vector<LayerSlice> layers) {
  ByteReader r(bytes, ErrorCode::kMalformedChunk);
  r.expect_tag({kCheckpointMagic, 4});
  if (r.u16() != kCheckpointVersion) r.fail("unsupported checkpoint version");
  OptimConfig cfg;
  const std::uint8_t algorithm = r.u8();
  if (algorithm > 1) r.fail("unknown algorithm");
  cfg.algorithm = static_cast<Algorithm>(algorithm);
  cfg.state_bits = static_cast<StateBits>(r.u8());
  const std::uint8_t tier = r.u8();
  if (tier > 1) r.fail("unknown tier");
  cfg.state_tier = static_cast<Tier>(tier);
  r.u8();
  cfg.beta1 = r.f64();
  cfg.beta2 = r.f64();
  cfg.epsilon = r.f64();
  cfg.weight_decay = r.f64();
  cfg.trust_clip.first = r.f64();
  cfg.trust_clip.second = r.f64();
  cfg.block_size = r.u32();
  const std::uint64_t step = r.u64();
  const std::uint64_t n = r.u64();
  try {
    cfg.Validate();
  } catch (const Error& e) {
    r.fail(e.what());
  }
  Optimizer opt(cfg, n, std::move(layers));
  std::size_t used = 0;
  auto rest = bytes.subspan(r.position());
  codec::QuantizedChunk m = codec::Deserialize(rest, &used);
  codec::QuantizedChunk v = codec::Deserialize(rest.subspan(used));
  if (m.num_elements != n || v.num_elements != n) r.fail("state length mismatch");
  OptimState& st = opt.state_;
  st.step = step;
  if (cfg.state_bits == StateBits::k8) {
    if (m.scheme != codec::Scheme::kQ8Blockwise || v.scheme != codec::Scheme::kQ8Blockwise) {
      r.fail("8-bit checkpoint must hold q8 chunks");
    }
    st.m_q = std::move(m);
    st.v_sqrt_q = std::move(v);
  } else {
    st.m = codec::Decode(m);
    st.v = codec::Decode(v);
  }
  return opt;
}

}  // namespace swarm::optim
