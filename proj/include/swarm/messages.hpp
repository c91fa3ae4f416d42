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

// Protocol messages and their wire encoding.
//
// Frame (little-endian): length u32 (type byte + body) | type u8 | body.
// Strings carry a u16 length prefix, byte blobs a u32 prefix; tensor blobs
// hold codec chunks in their own "TQC1" layout.
//
//   1 JOIN       peer_id str | token str | bandwidth_score f64
//   2 JOIN_ACK   round_id u64 | params blob | optimizer checkpoint blob
//   3 PROGRESS   round_id u64 | samples u64
//   4 TRIGGER    round_id u64 | attempt u32 | count u32 |
//                count x (peer_id str | samples u64 | slice_begin u64 | slice_end u64)
//   5 CONTRIB    round_id u64 | attempt u32 | samples u64 | chunk blob
//   6 SLICE      round_id u64 | attempt u32 | samples u64 | grad_norm f64 |
//                slice_begin u64 | chunk blob
//   7 GATHER     round_id u64 | attempt u32 | slice_begin u64 | chunk blob
//   8 STEP_DONE  round_id u64 | param_hash u64 | samples u64 | compute_seconds f64
//   9 LEAVE      (empty)
//  10 COMMIT     round_id u64 | attempt u32

#ifndef SWARM_MESSAGES_HPP_
#define SWARM_MESSAGES_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace swarm::protocol {

enum class MsgType : std::uint8_t {
  kJoin = 1,
  kJoinAck = 2,
  kProgress = 3,
  kTrigger = 4,
  kContrib = 5,
  kSlice = 6,
  kGather = 7,
  kStepDone = 8,
  kLeave = 9,
  kCommit = 10,
};

using Bytes = std::vector<std::uint8_t>;

struct JoinMsg {
  std::string peer_id;
  std::string token;
  double bandwidth_score = 1.0;
  bool operator==(const JoinMsg&) const = default;
};

struct JoinAckMsg {
  std::uint64_t round_id = 0;
  Bytes params;
  Bytes optimizer;
  bool operator==(const JoinAckMsg&) const = default;
};

struct ProgressMsg {
  std::uint64_t round_id = 0;
  std::uint64_t samples = 0;
  bool operator==(const ProgressMsg&) const = default;
};

struct TriggerEntry {
  std::string peer_id;
  std::uint64_t samples = 0;
  std::uint64_t slice_begin = 0;
  std::uint64_t slice_end = 0;
  bool operator==(const TriggerEntry&) const = default;
};

struct TriggerMsg {
  std::uint64_t round_id = 0;
  std::uint32_t attempt = 0;
  std::vector<TriggerEntry> members;
  bool operator==(const TriggerMsg&) const = default;
};

struct ContribMsg {
  std::uint64_t round_id = 0;
  std::uint32_t attempt = 0;
  std::uint64_t samples = 0;
  Bytes chunk;
  bool operator==(const ContribMsg&) const = default;
};

struct SliceMsg {
  std::uint64_t round_id = 0;
  std::uint32_t attempt = 0;
  std::uint64_t samples = 0;
  double grad_norm = 0.0;
  std::uint64_t slice_begin = 0;
  Bytes chunk;
  bool operator==(const SliceMsg&) const = default;
};

struct GatherMsg {
  std::uint64_t round_id = 0;
  std::uint32_t attempt = 0;
  std::uint64_t slice_begin = 0;
  Bytes chunk;
  bool operator==(const GatherMsg&) const = default;
};

struct StepDoneMsg {
  std::uint64_t round_id = 0;
  std::uint64_t param_hash = 0;
  std::uint64_t samples = 0;
  double compute_seconds = 0.0;
  bool operator==(const StepDoneMsg&) const = default;
};

struct LeaveMsg {
  bool operator==(const LeaveMsg&) const = default;
};

struct CommitMsg {
  std::uint64_t round_id = 0;
  std::uint32_t attempt = 0;
  bool operator==(const CommitMsg&) const = default;
};

using Message = std::variant<JoinMsg, JoinAckMsg, ProgressMsg, TriggerMsg, ContribMsg, SliceMsg,
                             GatherMsg, StepDoneMsg, LeaveMsg, CommitMsg>;

MsgType TypeOf(const Message& m);
const char* MsgTypeName(MsgType t);

Bytes EncodeMessage(const Message& m);
// Parses exactly one frame; throws kMalformedMessage on any inconsistency,
// including trailing bytes.
Message DecodeMessage(std::span<const std::uint8_t> frame);

}  // namespace swarm::protocol

#endif  // SWARM_MESSAGES_HPP_
