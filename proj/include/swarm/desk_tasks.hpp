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

// Closed-form training objectives with analytic per-sample gradients. They
// stand in for the transformer so that protocol and optimizer behaviour can
// be checked exactly.

#ifndef SWARM_DESK_TASKS_HPP_
#define SWARM_DESK_TASKS_HPP_

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "swarm/optimizers.hpp"

namespace swarm::tasks {

class Task {
 public:
  virtual ~Task() = default;

  virtual std::string name() const = 0;
  virtual std::size_t param_dim() const = 0;
  virtual std::size_t num_samples() const = 0;

  // Per-sample loss and gradient. AddGrad accumulates into `out`.
  virtual double Loss(std::span<const double> w, std::size_t sample) const = 0;
  virtual void AddGrad(std::span<const double> w, std::size_t sample,
                       std::span<double> out) const = 0;

  virtual std::vector<double> InitialParams() const {
    return std::vector<double>(param_dim(), 0.0);
  }
  virtual std::optional<std::vector<double>> Optimum() const { return std::nullopt; }
  // Layer partition for LAMB; one layer by default.
  virtual std::vector<optim::LayerSlice> Layers() const {
    return {{"w", 0, param_dim()}};
  }

  // Mean loss over the whole dataset.
  double MeanLoss(std::span<const double> w) const;
  double MeanLoss(std::span<const float> w) const;
};

// 1/2 ||w - w*||^2 with w* ~ N(0, I) drawn from `seed`. One sample.
std::unique_ptr<Task> MakeQuadratic(std::size_t dim, std::uint64_t seed);
// Same objective with an explicit optimum.
std::unique_ptr<Task> MakeQuadratic(std::vector<double> optimum);

// Binary logistic regression, labels in {-1, +1}, no bias. Features are
// standard normal; labels are sign(w_true . x) for a hidden w_true, so the
// data is linearly separable.
std::unique_ptr<Task> MakeLogReg(std::size_t n_samples, std::size_t dim, std::uint64_t seed);

// 4-16-1 tanh regression network fitted to a fixed random teacher network.
// Parameters are laid out W1 (16x4, row-major), b1, W2 (1x16), b2.
std::unique_ptr<Task> MakeTinyMlp(std::uint64_t seed);
// Same architecture over caller-provided inputs/targets (for edge cases).
std::unique_ptr<Task> MakeTinyMlp(std::vector<std::vector<double>> inputs,
                                  std::vector<double> targets, std::uint64_t init_seed,
                                  double init_scale = 0.5);

// Builds a task by name: "quadratic", "logreg" or "mlp".
struct TaskSpec {
  std::string name = "logreg";
  std::size_t dim = 20;
  std::size_t samples = 4096;
  std::uint64_t seed = 0;
};
std::unique_ptr<Task> MakeTask(const TaskSpec& spec);

std::vector<double> ToDouble(std::span<const float> w);
std::vector<float> ToFloat(std::span<const double> w);

}  // namespace swarm::tasks

#endif  // SWARM_DESK_TASKS_HPP_
