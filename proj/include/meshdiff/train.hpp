// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "meshdiff/denoiser.hpp"
#include "meshdiff/losses.hpp"
#include "meshdiff/serialize.hpp"
#include "meshdiff/synthdata.hpp"

namespace meshdiff {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adaptive-moment gradient descent over a fixed parameter list.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Eigen::MatrixXd*> params, const AdamConfig& config);
  void step(const std::vector<Eigen::MatrixXd>& grads);

 private:
  std::vector<Eigen::MatrixXd*> params_;
  std::vector<Eigen::MatrixXd> m_;
  std::vector<Eigen::MatrixXd> v_;
  AdamConfig config_;
  long t_ = 0;
};

struct TrainConfig {
  int updates = 2000;
  int batch_size = 16;
  AdamConfig adam;
  DiffusionTarget target = DiffusionTarget::epsilon;
  std::uint64_t seed = 0;
  double divergence_limit = 1e6;
};

// Minibatch loop: sample (instance, k, z), score the denoiser's prediction,
// evaluate the geometry losses on the implied h0 estimate, and apply the
// combined gradient. Throws when the batch loss exceeds the divergence limit.
// Returns one loss-curve row per update.
std::vector<LossCurveRow> train(TokenDenoiser& model,
                                std::span<const ProblemInstance> instances,
                                const NoiseSchedule& sched, const LossWeights& weights,
                                const TrainConfig& config);

}  // namespace meshdiff
