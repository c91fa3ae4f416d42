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

#ifndef SWARM_TESTS_TEST_SUPPORT_HPP_
#define SWARM_TESTS_TEST_SUPPORT_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "swarm/desk_tasks.hpp"
#include "swarm/error.hpp"
#include "swarm/random.hpp"

namespace swarm::testing {

// Runs f and returns the code of the swarm::Error it throws, if any.
template <typename F>
std::optional<ErrorCode> ErrorOf(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

inline std::vector<double> BatchGrad(const tasks::Task& task, const std::vector<double>& w,
                                     const std::vector<std::size_t>& batch) {
  std::vector<double> g(w.size(), 0.0);
  for (std::size_t s : batch) task.AddGrad(w, s, g);
  for (double& x : g) x /= static_cast<double>(batch.size());
  return g;
}

inline double BatchLoss(const tasks::Task& task, const std::vector<double>& w,
                        const std::vector<std::size_t>& batch) {
  double l = 0.0;
  for (std::size_t s : batch) l += task.Loss(w, s);
  return l / static_cast<double>(batch.size());
}

// Relative error ||g - fd|| / max(||g||, ||fd||) between the analytic batch
// gradient and central differences with step h.
inline double FiniteDifferenceError(const tasks::Task& task, const std::vector<double>& w,
                                    const std::vector<std::size_t>& batch, double h = 1e-5) {
  const auto g = BatchGrad(task, w, batch);
  double diff = 0.0, ng = 0.0, nf = 0.0;
  auto probe = w;
  for (std::size_t j = 0; j < w.size(); ++j) {
    probe[j] = w[j] + h;
    const double up = BatchLoss(task, probe, batch);
    probe[j] = w[j] - h;
    const double down = BatchLoss(task, probe, batch);
    probe[j] = w[j];
    const double fd = (up - down) / (2 * h);
    diff += (g[j] - fd) * (g[j] - fd);
    ng += g[j] * g[j];
    nf += fd * fd;
  }
  const double denom = std::max({std::sqrt(ng), std::sqrt(nf), 1e-12});
  return std::sqrt(diff) / denom;
}

// Worst finite-difference error over `points` random parameter vectors drawn
// around the task's initial point, each on a random batch of up to 64 samples.
inline double WorstFiniteDifferenceError(const tasks::Task& task, int points, std::uint64_t seed) {
  SplitMix64 rng(seed);
  double worst = 0.0;
  for (int p = 0; p < points; ++p) {
    auto w = task.InitialParams();
    for (double& x : w) x += rng.normal();
    std::vector<std::size_t> batch;
    const std::size_t n = std::min<std::size_t>(64, task.num_samples());
    for (std::size_t i = 0; i < n; ++i) batch.push_back(rng.below(task.num_samples()));
    worst = std::max(worst, FiniteDifferenceError(task, w, batch));
  }
  return worst;
}

}  // namespace swarm::testing

#endif  // SWARM_TESTS_TEST_SUPPORT_HPP_
