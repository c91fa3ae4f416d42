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

// Memory footprint of training a transformer under 8-bit optimizer state,
// optimizer offload, gradient checkpointing and parameter sharing.
//
// These formulas are reconstructions at the granularity of whole tensors:
//   weights          4 * N_stored                     (fp32 master copy)
//   gradients        4 * N_stored
//   optimizer_state  8 * N_stored                     (fp32 m and v), or
//                    2 * N_stored + 8 * ceil(N_stored / block)
//                                                     (8-bit m and v, one fp32
//                                                      scale per block each)
//                    held by the host instead of the device when offloaded
//   activations      L * b * s * d * act_bytes * c_act
//                    min(L, ceil(sqrt(L)) + 1) * b * s * d * act_bytes * c_act
//                    with checkpointing: one stored boundary per sqrt(L)
//                    segment plus one layer being recomputed.
// N_stored = ceil(N / sharing_factor). Framework overheads, fragmentation and
// kernel workspaces are ignored.

#ifndef SWARM_MEM_CALC_HPP_
#define SWARM_MEM_CALC_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace swarm::memcalc {

// Decoder or encoder-decoder transformer dimensions.
struct ArchDims {
  std::uint64_t layers = 0;
  std::uint64_t hidden = 0;
  std::uint64_t heads = 0;
  std::uint64_t vocab = 0;
  // Learned absolute positions; 0 for rotary or relative schemes.
  std::uint64_t max_positions = 0;
  // Feed-forward width; 0 means 4 * hidden.
  std::uint64_t ffn_hidden = 0;
  // GLU-style feed-forward (GEGLU/SwiGLU): two input projections.
  bool gated_ffn = false;
  // Input and output embeddings share one matrix.
  bool tied_embeddings = true;
  // Layers that additionally carry encoder-decoder attention.
  std::uint64_t cross_attention_layers = 0;

  std::uint64_t ffn() const { return ffn_hidden ? ffn_hidden : 4 * hidden; }
  void Validate() const;
};

// Parameter count:
//   per layer   4 d^2 (q, k, v, o) + (gated ? 3 : 2) d d_ff
//               + 4 d (attention biases) + (gated ? 2 : 1) d_ff + d (ffn biases)
//               + 4 d (two norms, gain and bias)
//   per cross-attention layer  4 d^2 + 4 d + 2 d
//   embeddings  vocab d (twice if untied) + max_positions d
//   final norm  2 d
// With ungated d_ff = 4d the matrices give the familiar 12 L d^2.
std::uint64_t EstimateParamCount(const ArchDims& dims);

// One named tensor of the model, in declaration order.
struct ParamTensor {
  std::string name;
  std::uint64_t count;
};

// Tensor-by-tensor enumeration; sums to EstimateParamCount.
std::vector<ParamTensor> EnumerateParams(const ArchDims& dims);

// ceil(count / sharing_factor); sharing_factor >= 1.
std::uint64_t StoredParams(std::uint64_t count, std::uint64_t sharing_factor);

struct ModelPreset {
  std::string name;
  // Published total; when absent the arch estimate is used.
  std::optional<std::uint64_t> param_count;
  std::optional<ArchDims> arch;
  std::string source;

  std::uint64_t Params() const;
  void Validate() const;
};

const std::vector<ModelPreset>& Presets();
// Throws kInvalidConfig for an unknown name.
const ModelPreset& FindPreset(const std::string& name);

struct TechniqueFlags {
  std::uint32_t optimizer_bits = 32;
  bool offload = false;
  bool checkpointing = false;
  std::uint64_t sharing_factor = 1;

  void Validate() const;
};

struct MemoryConstants {
  std::uint64_t act_bytes = 2;   // fp16 activations
  std::uint64_t c_act = 17;      // stored values per token per layer, in units of d
  std::uint64_t block_size = 4096;
};

struct DeviceBytes {
  std::uint64_t weights = 0;
  std::uint64_t gradients = 0;
  std::uint64_t optimizer_state = 0;
  std::uint64_t activations = 0;
  std::uint64_t Total() const;
};

struct HostBytes {
  std::uint64_t offloaded_state = 0;
  std::uint64_t Total() const { return offloaded_state; }
};

struct MemoryReport {
  std::string preset;
  std::uint64_t param_count = 0;
  std::uint64_t stored_params = 0;
  DeviceBytes device;
  HostBytes host;
  std::uint64_t device_total = 0;
  std::uint64_t host_total = 0;
  std::uint64_t total = 0;

  std::string ToJson() const;
  std::string ToTable() const;
};

// Optimizer-state bytes for n stored parameters.
std::uint64_t OptimizerStateBytes(std::uint64_t n, std::uint32_t bits,
                                  std::uint64_t block_size = 4096);

MemoryReport ComputeMemoryReport(const ModelPreset& preset, const TechniqueFlags& flags,
                                 std::uint64_t batch, std::uint64_t seq_len,
                                 const MemoryConstants& constants = {});

}  // namespace swarm::memcalc

#endif  // SWARM_MEM_CALC_HPP_
