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

#include <cinttypes>
#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "swarm/error.hpp"

namespace swarm::memcalc {
namespace {

std::uint64_t Mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r = 0;
  if (__builtin_mul_overflow(a, b, &r)) {
    throw Error(ErrorCode::kInvalidConfig, "byte count overflows 64 bits");
  }
  return r;
}

std::uint64_t Add(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r = 0;
  if (__builtin_add_overflow(a, b, &r)) {
    throw Error(ErrorCode::kInvalidConfig, "byte count overflows 64 bits");
  }
  return r;
}

std::uint64_t CeilDiv(std::uint64_t a, std::uint64_t b) { return a / b + (a % b != 0); }

std::uint64_t CeilSqrt(std::uint64_t n) {
  auto r = static_cast<std::uint64_t>(std::sqrt(static_cast<long double>(n)));
  while (r * r > n) --r;
  while (r * r < n) ++r;
  return r;
}

}  // namespace

void ArchDims::Validate() const {
  if (layers == 0 || hidden == 0 || heads == 0 || vocab == 0) {
    throw Error(ErrorCode::kInvalidConfig, "architecture dims must be positive");
  }
  if (cross_attention_layers > layers) {
    throw Error(ErrorCode::kInvalidConfig, "more cross-attention layers than layers");
  }
}

std::vector<ParamTensor> EnumerateParams(const ArchDims& a) {
  a.Validate();
  const std::uint64_t d = a.hidden;
  const std::uint64_t f = a.ffn();
  std::vector<ParamTensor> out;
  out.push_back({"embed.tokens", Mul(a.vocab, d)});
  if (a.max_positions) out.push_back({"embed.positions", Mul(a.max_positions, d)});
  for (std::uint64_t l = 0; l < a.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    out.push_back({p + "attn_norm.gain", d});
    out.push_back({p + "attn_norm.bias", d});
    for (const char* m : {"q", "k", "v", "o"}) {
      out.push_back({p + "attn." + m + ".weight", Mul(d, d)});
      out.push_back({p + "attn." + m + ".bias", d});
    }
    // Cross-attention sits in the last layers (the decoder stack).
    if (l >= a.layers - a.cross_attention_layers) {
      out.push_back({p + "cross_norm.gain", d});
      out.push_back({p + "cross_norm.bias", d});
      for (const char* m : {"q", "k", "v", "o"}) {
        out.push_back({p + "cross." + m + ".weight", Mul(d, d)});
        out.push_back({p + "cross." + m + ".bias", d});
      }
    }
    out.push_back({p + "ffn_norm.gain", d});
    out.push_back({p + "ffn_norm.bias", d});
    out.push_back({p + "ffn.in.weight", Mul(d, f)});
    out.push_back({p + "ffn.in.bias", f});
    if (a.gated_ffn) {
      out.push_back({p + "ffn.gate.weight", Mul(d, f)});
      out.push_back({p + "ffn.gate.bias", f});
    }
    out.push_back({p + "ffn.out.weight", Mul(f, d)});
    out.push_back({p + "ffn.out.bias", d});
  }
  out.push_back({"final_norm.gain", d});
  out.push_back({"final_norm.bias", d});
  if (!a.tied_embeddings) out.push_back({"head.weight", Mul(a.vocab, d)});
  return out;
}

std::uint64_t EstimateParamCount(const ArchDims& a) {
  a.Validate();
  const std::uint64_t d = a.hidden;
  const std::uint64_t f = a.ffn();
  const std::uint64_t ffn_mats = a.gated_ffn ? 3 : 2;
  const std::uint64_t ffn_bias = (a.gated_ffn ? 2 : 1) * f + d;
  const std::uint64_t per_layer =
      Add(Add(Mul(4, Mul(d, d)), Mul(ffn_mats, Mul(d, f))), Add(4 * d + 4 * d, ffn_bias));
  const std::uint64_t per_cross = Add(Mul(4, Mul(d, d)), 6 * d);
  std::uint64_t n = Add(Mul(a.layers, per_layer), Mul(a.cross_attention_layers, per_cross));
  n = Add(n, Mul(a.tied_embeddings ? 1 : 2, Mul(a.vocab, d)));
  n = Add(n, Mul(a.max_positions, d));
  return Add(n, 2 * d);
}

std::uint64_t StoredParams(std::uint64_t count, std::uint64_t sharing_factor) {
  if (sharing_factor == 0) throw Error(ErrorCode::kInvalidConfig, "sharing_factor must be >= 1");
  return CeilDiv(count, sharing_factor);
}

std::uint64_t ModelPreset::Params() const {
  if (param_count) return *param_count;
  if (arch) return EstimateParamCount(*arch);
  throw Error(ErrorCode::kInvalidConfig, "preset '" + name + "' has neither count nor dims");
}

void ModelPreset::Validate() const {
  if (!param_count && !arch) {
    throw Error(ErrorCode::kInvalidConfig, "preset '" + name + "' has neither count nor dims");
  }
  if (param_count && *param_count == 0) {
    throw Error(ErrorCode::kInvalidConfig, "preset '" + name + "' has zero parameters");
  }
  if (arch) arch->Validate();
}

const std::vector<ModelPreset>& Presets() {
  // Published totals; every entry is cross-checked against EstimateParamCount
  // of its public architecture in the unit tests.
  static const std::vector<ModelPreset> kPresets = [] {
    std::vector<ModelPreset> p;
    ArchDims bert{24, 1024, 16, 30522, 512, 4096, false, true, 0};
    p.push_back({"bert-large", 340'000'000ULL, bert, "BERT-Large, 340M as published"});
    ArchDims t5{48, 1024, 16, 32128, 0, 4096, false, true, 24};
    p.push_back({"t5-large", 770'000'000ULL, t5, "T5-Large, 24+24 layers, 770M as published"});
    ArchDims gpt2{36, 1280, 20, 50257, 1024, 5120, false, true, 0};
    p.push_back({"gpt2-large", 774'000'000ULL, gpt2, "GPT-2 Large, 774M as published"});
    ArchDims gpt3{96, 12288, 96, 50257, 2048, 49152, false, true, 0};
    p.push_back({"gpt3-175b", 175'000'000'000ULL, gpt3, "GPT-3 175B as published"});
    ArchDims gptj{28, 4096, 16, 50400, 0, 16384, false, false, 0};
    p.push_back({"gpt-j-6b", 6'053'381'344ULL, gptj, "GPT-J 6B, exact released count"});
    // 64 layers of width 1024 with GEGLU feed-forward, tied embeddings over
    // 16384 text + 8192 image tokens, rotary positions.
    ArchDims dalle{64, 1024, 16, 16384 + 8192, 0, 4096, true, true, 0};
    p.push_back({"dalle-1.1b", 1'100'000'000ULL, dalle, "collaborative text-to-image run, ~1.1B"});
    return p;
  }();
  return kPresets;
}

const ModelPreset& FindPreset(const std::string& name) {
  for (const auto& p : Presets()) {
    if (p.name == name) return p;
  }
  std::string known;
  for (const auto& p : Presets()) known += (known.empty() ? "" : ", ") + p.name;
  throw Error(ErrorCode::kInvalidConfig, "unknown preset '" + name + "' (known: " + known + ")");
}

void TechniqueFlags::Validate() const {
  if (optimizer_bits != 32 && optimizer_bits != 8) {
    throw Error(ErrorCode::kInvalidConfig, "optimizer bits must be 32 or 8");
  }
  if (sharing_factor < 1) throw Error(ErrorCode::kInvalidConfig, "sharing_factor must be >= 1");
}

std::uint64_t DeviceBytes::Total() const {
  return Add(Add(weights, gradients), Add(optimizer_state, activations));
}

std::uint64_t OptimizerStateBytes(std::uint64_t n, std::uint32_t bits, std::uint64_t block_size) {
  if (bits == 32) return Mul(8, n);
  if (bits != 8) throw Error(ErrorCode::kInvalidConfig, "optimizer bits must be 32 or 8");
  if (block_size == 0) throw Error(ErrorCode::kInvalidConfig, "block size must be positive");
  return Add(Mul(2, n), Mul(8, CeilDiv(n, block_size)));
}

MemoryReport ComputeMemoryReport(const ModelPreset& preset, const TechniqueFlags& flags,
                                 std::uint64_t batch, std::uint64_t seq_len,
                                 const MemoryConstants& c) {
  preset.Validate();
  flags.Validate();
  if (batch == 0 || seq_len == 0) {
    throw Error(ErrorCode::kInvalidConfig, "batch and sequence length must be >= 1");
  }
  MemoryReport r;
  r.preset = preset.name;
  r.param_count = preset.Params();
  r.stored_params = StoredParams(r.param_count, flags.sharing_factor);
  r.device.weights = Mul(4, r.stored_params);
  r.device.gradients = Mul(4, r.stored_params);
  const std::uint64_t state = OptimizerStateBytes(r.stored_params, flags.optimizer_bits,
                                                  c.block_size);
  if (flags.offload) {
    r.host.offloaded_state = state;
  } else {
    r.device.optimizer_state = state;
  }
  if (preset.arch) {
    const std::uint64_t L = preset.arch->layers;
    const std::uint64_t per_layer =
        Mul(Mul(Mul(batch, seq_len), preset.arch->hidden), Mul(c.act_bytes, c.c_act));
    const std::uint64_t held = flags.checkpointing ? std::min(L, CeilSqrt(L) + 1) : L;
    r.device.activations = Mul(held, per_layer);
  }
  r.device_total = r.device.Total();
  r.host_total = r.host.Total();
  r.total = Add(r.device_total, r.host_total);
  return r;
}

std::string MemoryReport::ToJson() const {
  nlohmann::ordered_json j;
  j["preset"] = preset;
  j["param_count"] = param_count;
  j["stored_params"] = stored_params;
  j["device"] = {{"weights", device.weights},
                 {"gradients", device.gradients},
                 {"optimizer_state", device.optimizer_state},
                 {"activations", device.activations}};
  j["host"] = {{"offloaded_state", host.offloaded_state}};
  j["totals"] = {{"device", device_total}, {"host", host_total}, {"total", total}};
  return j.dump(2);
}

std::string MemoryReport::ToTable() const {
  std::string out;
  char line[128];
  auto row = [&](const char* where, const char* what, std::uint64_t bytes) {
    std::snprintf(line, sizeof line, "%-7s %-16s %20" PRIu64 "  %10.3f GiB\n", where, what, bytes,
                  static_cast<double>(bytes) / (1ULL << 30));
    out += line;
  };
  std::snprintf(line, sizeof line, "%s: %" PRIu64 " parameters, %" PRIu64 " stored\n",
                preset.c_str(), param_count, stored_params);
  out += line;
  row("device", "weights", device.weights);
  row("device", "gradients", device.gradients);
  row("device", "optimizer_state", device.optimizer_state);
  row("device", "activations", device.activations);
  row("host", "offloaded_state", host.offloaded_state);
  row("total", "device", device_total);
  row("total", "host", host_total);
  row("total", "all", total);
  return out;
}

}  // namespace swarm::memcalc
