// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <vector>

#include <Eigen/Core>

namespace meshdiff {

// Cumulative noise schedule. alphas[k] is the cumulative signal-retention
// coefficient of step k (alphas[0] = 1), NOT the per-step ratio; the ratio
// alphas[k]/alphas[k-1] is what a single forward step multiplies in.
// sigmas[k] is the stochastic scale of the reverse step leaving k, indexed by
// the source step. steps is the strictly decreasing subsequence of step
// indices visited at inference; the hop after steps.back() lands on 0.
struct NoiseSchedule {
  Eigen::VectorXd alphas;  // length K+1, indexed 0..K
  Eigen::VectorXd sigmas;  // length K+1, sigmas[0] unused and zero
  std::vector<int> steps;
  int K = 0;

  // Construction parameters, kept so a schedule file reproduces this
  // schedule byte for byte.
  double alpha_first = 0.0;
  double alpha_last = 0.0;
  double eta = 0.0;

  // Throws std::invalid_argument when any schedule invariant is violated:
  // alphas strictly decreasing on 1..K within (0,1], alphas[K] <= 1e-3,
  // sigmas[k]^2 <= 1 - alphas[k-1], steps starting at K and strictly
  // decreasing within [1, K].
  void validate() const;
};

// Builds the linear-interpolation schedule: alphas[k] runs from alpha_first
// (k=1) to alpha_last (k=K), sigmas[k] is the eta-scaled DDPM-equivalent
// value, and steps is a uniformly spaced length-ddim_steps subsequence from K
// whose terminal hop reaches 0.
NoiseSchedule build_schedule(int K, double alpha_first, double alpha_last,
                             double eta, int ddim_steps);

// Plain-text key-value round trip (K, endpoints, eta, steps list). Loading
// rebuilds alphas/sigmas from the stored parameters, so a saved schedule
// reproduces the original exactly.
void save_schedule(const NoiseSchedule& sched, const std::filesystem::path& path);
NoiseSchedule load_schedule(const std::filesystem::path& path);

}  // namespace meshdiff
