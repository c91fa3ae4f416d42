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

#ifndef SWARM_ERROR_HPP_
#define SWARM_ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace swarm {

enum class ErrorCode {
  kNonFiniteInput,
  kMalformedChunk,
  kOverflowToInfinity,
  kStepOutOfRange,
  kShapeMismatch,
  kNonFiniteGradient,
  kEmptyRound,
  kInvalidPolicy,
  kRoundAborted,
  kUnknownPeer,
  kInvalidConfig,
  kCodeOutOfRange,
  kEmptyShard,
  kChecksumMismatch,
  kFetchFailed,
  kMalformedMessage,
  kIoError,
};

std::string_view ErrorCodeName(ErrorCode code);

// Every recoverable failure in the library surfaces as swarm::Error. The
// code is stable and is what callers (and the CLI exit-code mapping) branch
// on; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace swarm

#endif  // SWARM_ERROR_HPP_
