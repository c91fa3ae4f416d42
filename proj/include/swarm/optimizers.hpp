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

// Adam and LAMB with a linear warmup/decay schedule, optional 8-bit state
// and an offload tier.
//
// 8-bit state keeps m as a Q8 chunk and v as a Q8 chunk of sqrt(v), so the
// signed codebook is spent on a quantity of comparable dynamic range and v
// stays non-negative after decoding. Steps always run in 32-bit: the state
// is unpacked, updated and packed again.

#ifndef SWARM_OPTIMIZERS_HPP_
#define SWARM_OPTIMIZERS_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "swarm/tensor_codec.hpp"

namespace swarm::optim {

struct ScheduleConfig {
  std::uint64_t total_steps = 31250;
  double warmup_fraction = 0.1;
  double peak_lr = 2.5e-3;
  double end_lr = 0.0;

  void Validate() const;
  std::uint64_t warmup_steps() const;
};

// Linear 0 -> peak over the warmup steps, then linear peak -> end_lr.
// Throws kStepOutOfRange for step > total_steps.
double LrAt(std::uint64_t step, const ScheduleConfig& s);

enum class Algorithm : std::uint8_t { kAdam = 0, kLamb = 1 };
enum class StateBits : std::uint8_t { k32 = 32, k8 = 8 };
enum class Tier : std::uint8_t { kCompute = 0, kOffloaded = 1 };

struct OptimConfig {
  Algorithm algorithm = Algorithm::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  std::pair<double, double> trust_clip{0.0, 10.0};
  StateBits state_bits = StateBits::k32;
  Tier state_tier = Tier::kCompute;
  std::uint32_t block_size = 4096;  // for 8-bit state

  static OptimConfig Adam();
  // LAMB defaults differ from Adam only in beta2 (0.95).
  static OptimConfig Lamb();
  void Validate() const;
};

// A named, contiguous range of the flat parameter vector. LAMB computes one
// trust ratio per layer.
struct LayerSlice {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

struct OptimState {
  std::size_t num_params = 0;
  StateBits bits = StateBits::k32;
  std::uint32_t block_size = 4096;
  // Populated when bits == k32.
  std::vector<float> m;
  std::vector<float> v;
  // Populated when bits == k8. v_sqrt holds sqrt(v).
  codec::QuantizedChunk m_q;
  codec::QuantizedChunk v_sqrt_q;
  std::uint64_t step = 0;
  Tier tier = Tier::kCompute;
  std::uint64_t transfer_bytes_accumulated = 0;

  static OptimState Zeros(std::size_t n, StateBits bits = StateBits::k32,
                          std::uint32_t block_size = 4096);

  // Bytes occupied by the moment buffers in their current representation:
  // 8n for 32-bit; payload plus scales of both chunks for 8-bit.
  std::uint64_t StateBytes() const;
};

// Converts the state to the requested representation. Packing to 8-bit from
// 8-bit or unpacking from 32-bit returns the state unchanged.
OptimState PackState(const OptimState& st, StateBits bits);
OptimState UnpackState(const OptimState& st);

enum class TransferDirection { kOffload, kFetch };

// Marks the state resident in the target tier and accounts StateBytes().
// Moving to the tier the state already occupies is a no-op.
void TierTransfer(OptimState& st, TransferDirection direction);

// One Adam step in place. `st` must be 32-bit (unpacked).
// m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
// w <- w - lr * mhat / (sqrt(vhat) + eps) - lr * wd * w
void AdamStep(std::span<float> w, std::span<const float> g, OptimState& st,
              const OptimConfig& cfg, double lr);

// Trust ratio for one layer: clamp(w_norm / r_norm, clip) or exactly 1 when
// either norm is zero.
double TrustRatio(double w_norm, double r_norm, std::pair<double, double> clip);

// One LAMB step in place. An empty `layers` treats the vector as one layer.
void LambStep(std::span<float> w, std::span<const float> g, OptimState& st,
              const OptimConfig& cfg, double lr,
              std::span<const LayerSlice> layers = {});

// Stateful wrapper used by peers: handles unpack/repack for 8-bit state and
// fetch/offload around every step when the configured tier is kOffloaded.
class Optimizer {
 public:
  Optimizer(OptimConfig cfg, std::size_t num_params,
            std::vector<LayerSlice> layers = {});

  void Step(std::span<float> w, std::span<const float> g, double lr);

  const OptimConfig& config() const { return cfg_; }
  const OptimState& state() const { return state_; }
  OptimState& mutable_state() { return state_; }
  const std::vector<LayerSlice>& layers() const { return layers_; }

  // "TOPT" checkpoint: magic, u16 version, config block, step, then the m and
  // v buffers as codec chunks (F32 for 32-bit state, Q8 for 8-bit state).
  std::vector<std::uint8_t> SaveCheckpoint() const;
  static Optimizer LoadCheckpoint(std::span<const std::uint8_t> bytes,
                                  std::vector<LayerSlice> layers = {});

 private:
  OptimConfig cfg_;
  std::vector<LayerSlice> layers_;
  OptimState state_;
};

}  // namespace swarm::optim

#endif  // SWARM_OPTIMIZERS_HPP_
