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

#include "swarm/messages.hpp"

#include "swarm/error.hpp"
#include "swarm/wire.hpp"

namespace swarm::protocol {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Bytes ToBytes(std::span<const std::uint8_t> b) { return {b.begin(), b.end()}; }

}  // namespace

MsgType TypeOf(const Message& m) {
  return static_cast<MsgType>(m.index() + 1);
}

const char* MsgTypeName(MsgType t) {
  switch (t) {
    case MsgType::kJoin: return "JOIN";
    case MsgType::kJoinAck: return "JOIN_ACK";
    case MsgType::kProgress: return "PROGRESS";
    case MsgType::kTrigger: return "TRIGGER";
    case MsgType::kContrib: return "CONTRIB";
    case MsgType::kSlice: return "SLICE";
    case MsgType::kGather: return "GATHER";
    case MsgType::kStepDone: return "STEP_DONE";
    case MsgType::kLeave: return "LEAVE";
    case MsgType::kCommit: return "COMMIT";
  }
  return "?";
}

Bytes EncodeMessage(const Message& m) {
  ByteWriter w;
  w.u32(0);  // patched below
  w.u8(static_cast<std::uint8_t>(TypeOf(m)));
  std::visit(Overloaded{
                 [&](const JoinMsg& x) {
                   w.str(x.peer_id);
                   w.str(x.token);
                   w.f64(x.bandwidth_score);
                 },
                 [&](const JoinAckMsg& x) {
                   w.u64(x.round_id);
                   w.blob(x.params);
                   w.blob(x.optimizer);
                 },
                 [&](const ProgressMsg& x) {
                   w.u64(x.round_id);
                   w.u64(x.samples);
                 },
                 [&](const TriggerMsg& x) {
                   w.u64(x.round_id);
                   w.u32(x.attempt);
                   w.u32(static_cast<std::uint32_t>(x.members.size()));
                   for (const auto& e : x.members) {
                     w.str(e.peer_id);
                     w.u64(e.samples);
                     w.u64(e.slice_begin);
                     w.u64(e.slice_end);
                   }
                 },
                 [&](const ContribMsg& x) {
                   w.u64(x.round_id);
                   w.u32(x.attempt);
                   w.u64(x.samples);
                   w.blob(x.chunk);
                 },
                 [&](const SliceMsg& x) {
                   w.u64(x.round_id);
                   w.u32(x.attempt);
                   w.u64(x.samples);
                   w.f64(x.grad_norm);
                   w.u64(x.slice_begin);
                   w.blob(x.chunk);
                 },
                 [&](const GatherMsg& x) {
                   w.u64(x.round_id);
                   w.u32(x.attempt);
                   w.u64(x.slice_begin);
                   w.blob(x.chunk);
                 },
                 [&](const StepDoneMsg& x) {
                   w.u64(x.round_id);
                   w.u64(x.param_hash);
                   w.u64(x.samples);
                   w.f64(x.compute_seconds);
                 },
                 [&](const LeaveMsg&) {},
                 [&](const CommitMsg& x) {
                   w.u64(x.round_id);
                   w.u32(x.attempt);
                 },
             },
             m);
  Bytes out = w.take();
  const std::uint32_t len = static_cast<std::uint32_t>(out.size() - 4);
  std::memcpy(out.data(), &len, 4);
  return out;
}

Message DecodeMessage(std::span<const std::uint8_t> frame) {
  ByteReader r(frame, ErrorCode::kMalformedMessage);
  const std::uint32_t len = r.u32();
  if (len != r.remaining()) r.fail("frame length does not match payload");
  const std::uint8_t type = r.u8();
  Message out;
  switch (static_cast<MsgType>(type)) {
    case MsgType::kJoin: {
      JoinMsg x;
      x.peer_id = r.str();
      x.token = r.str();
      x.bandwidth_score = r.f64();
      out = std::move(x);
      break;
    }
    case MsgType::kJoinAck: {
      JoinAckMsg x;
      x.round_id = r.u64();
      x.params = ToBytes(r.blob());
      x.optimizer = ToBytes(r.blob());
      out = std::move(x);
      break;
    }
    case MsgType::kProgress: {
      ProgressMsg x;
      x.round_id = r.u64();
      x.samples = r.u64();
      out = x;
      break;
    }
    case MsgType::kTrigger: {
      TriggerMsg x;
      x.round_id = r.u64();
      x.attempt = r.u32();
      const std::uint32_t count = r.u32();
      // Each entry is at least 26 bytes; reject absurd counts before reserving.
      if (count > r.remaining() / 26) r.fail("trigger member count exceeds frame");
      x.members.resize(count);
      for (auto& e : x.members) {
        e.peer_id = r.str();
        e.samples = r.u64();
        e.slice_begin = r.u64();
        e.slice_end = r.u64();
      }
      out = std::move(x);
      break;
    }
    case MsgType::kContrib: {
      ContribMsg x;
      x.round_id = r.u64();
      x.attempt = r.u32();
      x.samples = r.u64();
      x.chunk = ToBytes(r.blob());
      out = std::move(x);
      break;
    }
    case MsgType::kSlice: {
      SliceMsg x;
      x.round_id = r.u64();
      x.attempt = r.u32();
      x.samples = r.u64();
      x.grad_norm = r.f64();
      x.slice_begin = r.u64();
      x.chunk = ToBytes(r.blob());
      out = std::move(x);
      break;
    }
    case MsgType::kGather: {
      GatherMsg x;
      x.round_id = r.u64();
      x.attempt = r.u32();
      x.slice_begin = r.u64();
      x.chunk = ToBytes(r.blob());
      out = std::move(x);
      break;
    }
    case MsgType::kStepDone: {
      StepDoneMsg x;
      x.round_id = r.u64();
      x.param_hash = r.u64();
      x.samples = r.u64();
      x.compute_seconds = r.f64();
      out = x;
      break;
    }
    case MsgType::kLeave:
      out = LeaveMsg{};
      break;
    case MsgType::kCommit: {
      CommitMsg x;
      x.round_id = r.u64();
      x.attempt = r.u32();
      out = x;
      break;
    }
    default:
      r.fail("unknown message type " + std::to_string(type));
  }
  if (!r.done()) r.fail("trailing bytes after message body");
  return out;
}

}  // namespace swarm::protocol
