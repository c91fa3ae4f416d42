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

// Command implementations behind the swarmctl and memcalc executables.
//
// Exit codes: 0 success, 1 runtime failure (I/O, damaged data),
// 2 usage or configuration error, 3 simulation aborted before completing.

#ifndef SWARM_TOOLS_COMMANDS_HPP_
#define SWARM_TOOLS_COMMANDS_HPP_

#include <ostream>
#include <string>
#include <vector>

namespace swarm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitAborted = 3;

int RunSwarmctl(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int RunMemcalc(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace swarm::cli

#endif  // SWARM_TOOLS_COMMANDS_HPP_
