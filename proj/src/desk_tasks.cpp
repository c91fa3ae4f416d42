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

#include "swarm/desk_tasks.hpp"

#include <cmath>

#include "swarm/error.hpp"
#include "swarm/random.hpp"

namespace swarm::tasks {
namespace {

class Quadratic final : public Task {
 public:
  explicit Quadratic(std::vector<double> optimum) : optimum_(std::move(optimum)) {}

  std::string name() const override { return "quadratic"; }
  std::size_t param_dim() const override { return optimum_.size(); }
  std::size_t num_samples() const override { return 1; }

  double Loss(std::span<const double> w, std::size_t) const override {
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += (w[i] - optimum_[i]) * (w[i] - optimum_[i]);
    return 0.5 * s;
  }

  void AddGrad(std::span<const double> w, std::size_t, std::span<double> out) const override {
    for (std::size_t i = 0; i < w.size(); ++i) out[i] += w[i] - optimum_[i];
  }

  std::optional<std::vector<double>> Optimum() const override { return optimum_; }

 private:
  std::vector<double> optimum_;
};

class LogReg final : public Task {
 public:
  LogReg(std::size_t n, std::size_t dim, std::uint64_t seed) : dim_(dim) {
    SplitMix64 rng(MixSeed(seed, 0x6c6f67));
    std::vector<double> w_true(dim);
    for (auto& x : w_true) x = rng.normal();
    x_.resize(n * dim);
    y_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double z = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        x_[i * dim + j] = rng.normal();
        z += x_[i * dim + j] * w_true[j];
      }
      y_[i] = z >= 0.0 ? 1.0 : -1.0;
    }
  }

  std::string name() const override { return "logreg"; }
  std::size_t param_dim() const override { return dim_; }
  std::size_t num_samples() const override { return y_.size(); }

  double Loss(std::span<const double> w, std::size_t s) const override {
    const double margin = y_[s] * Dot(w, s);
    // log(1 + exp(-margin)), stable for either sign.
    return margin > 0.0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
  }

  void AddGrad(std::span<const double> w, std::size_t s, std::span<double> out) const override {
    const double margin = y_[s] * Dot(w, s);
    // d/dz log(1+exp(-z)) = -sigmoid(-z)
    const double coeff = -y_[s] * Sigmoid(-margin);
    for (std::size_t j = 0; j < dim_; ++j) out[j] += coeff * x_[s * dim_ + j];
  }

  std::span<const double> features(std::size_t s) const { return {&x_[s * dim_], dim_}; }
  double label(std::size_t s) const { return y_[s]; }

 private:
  static double Sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
  }

  double Dot(std::span<const double> w, std::size_t s) const {
    double z = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) z += w[j] * x_[s * dim_ + j];
    return z;
  }

  std::size_t dim_;
  std::vector<double> x_;
  std::vector<double> y_;
};

constexpr std::size_t kMlpIn = 4;
constexpr std::size_t kMlpHidden = 16;
constexpr std::size_t kMlpParams = kMlpHidden * kMlpIn + kMlpHidden + kMlpHidden + 1;

class TinyMlp final : public Task {
 public:
  TinyMlp(std::vector<std::vector<double>> inputs, std::vector<double> targets,
          std::vector<double> init)
      : inputs_(std::move(inputs)), targets_(std::move(targets)), init_(std::move(init)) {
    if (inputs_.size() != targets_.size()) {
      throw Error(ErrorCode::kShapeMismatch, "mlp inputs and targets differ in length");
    }
    for (const auto& x : inputs_) {
      if (x.size() != kMlpIn) throw Error(ErrorCode::kShapeMismatch, "mlp input must have 4 features");
    }
  }

  std::string name() const override { return "mlp"; }
  std::size_t param_dim() const override { return kMlpParams; }
  std::size_t num_samples() const override { return targets_.size(); }
  std::vector<double> InitialParams() const override { return init_; }

  std::vector<optim::LayerSlice> Layers() const override {
    return {{"W1", 0, kMlpHidden * kMlpIn},
            {"b1", kMlpHidden * kMlpIn, kMlpHidden},
            {"W2", kMlpHidden * kMlpIn + kMlpHidden, kMlpHidden},
            {"b2", kMlpParams - 1, 1}};
  }

  double Loss(std::span<const double> w, std::size_t s) const override {
    double hidden[kMlpHidden];
    const double err = Forward(w, s, hidden) - targets_[s];
    return 0.5 * err * err;
  }

  void AddGrad(std::span<const double> w, std::size_t s, std::span<double> out) const override {
    double hidden[kMlpHidden];
    const double err = Forward(w, s, hidden) - targets_[s];
    const std::size_t b1 = kMlpHidden * kMlpIn;
    const std::size_t w2 = b1 + kMlpHidden;
    const std::size_t b2 = w2 + kMlpHidden;
    out[b2] += err;
    for (std::size_t h = 0; h < kMlpHidden; ++h) {
      out[w2 + h] += err * hidden[h];
      const double dpre = err * w[w2 + h] * (1.0 - hidden[h] * hidden[h]);
      out[b1 + h] += dpre;
      for (std::size_t i = 0; i < kMlpIn; ++i) out[h * kMlpIn + i] += dpre * inputs_[s][i];
    }
  }

  static double Evaluate(std::span<const double> w, std::span<const double> x, double* hidden) {
    const std::size_t b1 = kMlpHidden * kMlpIn;
    const std::size_t w2 = b1 + kMlpHidden;
    double y = w[w2 + kMlpHidden];
    for (std::size_t h = 0; h < kMlpHidden; ++h) {
      double pre = w[b1 + h];
      for (std::size_t i = 0; i < kMlpIn; ++i) pre += w[h * kMlpIn + i] * x[i];
      hidden[h] = std::tanh(pre);
      y += w[w2 + h] * hidden[h];
    }
    return y;
  }

 private:
  double Forward(std::span<const double> w, std::size_t s, double* hidden) const {
    return Evaluate(w, inputs_[s], hidden);
  }

  std::vector<std::vector<double>> inputs_;
  std::vector<double> targets_;
  std::vector<double> init_;
};

std::vector<double> RandomMlpParams(SplitMix64& rng, double scale) {
  std::vector<double> w(kMlpParams);
  for (auto& x : w) x = scale * rng.normal();
  return w;
}

}  // namespace

double Task::MeanLoss(std::span<const double> w) const {
  double s = 0.0;
  for (std::size_t i = 0; i < num_samples(); ++i) s += Loss(w, i);
  return s / static_cast<double>(num_samples());
}

double Task::MeanLoss(std::span<const float> w) const {
  const auto wd = ToDouble(w);
  return MeanLoss(std::span<const double>(wd));
}

std::unique_ptr<Task> MakeQuadratic(std::size_t dim, std::uint64_t seed) {
  if (dim < 1) throw Error(ErrorCode::kInvalidConfig, "quadratic dim < 1");
  SplitMix64 rng(MixSeed(seed, 0x717561));
  std::vector<double> optimum(dim);
  for (auto& x : optimum) x = rng.normal();
  return MakeQuadratic(std::move(optimum));
}

std::unique_ptr<Task> MakeQuadratic(std::vector<double> optimum) {
  return std::make_unique<Quadratic>(std::move(optimum));
}

std::unique_ptr<Task> MakeLogReg(std::size_t n_samples, std::size_t dim, std::uint64_t seed) {
  if (n_samples < 1 || dim < 1) throw Error(ErrorCode::kInvalidConfig, "logreg needs n, dim >= 1");
  return std::make_unique<LogReg>(n_samples, dim, seed);
}

std::unique_ptr<Task> MakeTinyMlp(std::uint64_t seed) {
  SplitMix64 rng(MixSeed(seed, 0x6d6c70));
  const auto teacher = RandomMlpParams(rng, 1.0);
  constexpr std::size_t kSamples = 256;
  std::vector<std::vector<double>> inputs(kSamples, std::vector<double>(kMlpIn));
  std::vector<double> targets(kSamples);
  double hidden[kMlpHidden];
  for (std::size_t s = 0; s < kSamples; ++s) {
    for (auto& x : inputs[s]) x = rng.normal();
    targets[s] = TinyMlp::Evaluate(teacher, inputs[s], hidden);
  }
  auto init = RandomMlpParams(rng, 0.5);
  return std::make_unique<TinyMlp>(std::move(inputs), std::move(targets), std::move(init));
}

std::unique_ptr<Task> MakeTinyMlp(std::vector<std::vector<double>> inputs,
                                  std::vector<double> targets, std::uint64_t init_seed,
                                  double init_scale) {
  SplitMix64 rng(MixSeed(init_seed, 0x696e6974));
  auto init = RandomMlpParams(rng, init_scale);
  return std::make_unique<TinyMlp>(std::move(inputs), std::move(targets), std::move(init));
}

std::unique_ptr<Task> MakeTask(const TaskSpec& spec) {
  if (spec.name == "quadratic") return MakeQuadratic(spec.dim, spec.seed);
  if (spec.name == "logreg") return MakeLogReg(spec.samples, spec.dim, spec.seed);
  if (spec.name == "mlp") return MakeTinyMlp(spec.seed);
  throw Error(ErrorCode::kInvalidConfig, "unknown task '" + spec.name + "'");
}

std::vector<double> ToDouble(std::span<const float> w) { return {w.begin(), w.end()}; }

std::vector<float> ToFloat(std::span<const double> w) {
  std::vector<float> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = static_cast<float>(w[i]);
  return out;
}

}  // namespace swarm::tasks
