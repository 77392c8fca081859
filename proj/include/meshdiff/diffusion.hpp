// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "meshdiff/mesh.hpp"
#include "meshdiff/schedule.hpp"

namespace meshdiff {

// Diffuses a clean sample to step k: sqrt(alpha_k) h0 + sqrt(1 - alpha_k) z.
MeshSample forward_sample(const MeshSample& h0, int k, const NoiseSchedule& sched,
                          const GaussianNoise& z);

// One-shot estimate of the clean sample from the state at step k:
// (h_k - sqrt(1 - alpha_k) eps) / sqrt(alpha_k), tagged step 0.
MeshSample estimate_h0(const MeshSample& hk, const Mat3& eps_pred, int k,
                       const NoiseSchedule& sched);

// Reverse hop k_from -> k_to:
//   sqrt(1 - alpha_to - sigma^2) eps + sqrt(alpha_to) h0_hat + sigma z,
// with sigma = sigmas[k_from] (indexed by the source step). k_to = k_from - 1
// is the single step; larger hops skip steps. Throws when sigma^2 exceeds
// 1 - alpha_to for the requested hop.
MeshSample reverse_step(const MeshSample& hk, int k_from, int k_to,
                        const Mat3& eps_pred, const NoiseSchedule& sched,
                        const GaussianNoise& z);

// Same update with the stochastic scale chosen by the caller; the sampling
// chains use this to run the terminal hop noise-free.
MeshSample reverse_step_with_sigma(const MeshSample& hk, int k_from, int k_to,
                                   const Mat3& eps_pred, const NoiseSchedule& sched,
                                   const GaussianNoise& z, double sigma);

}  // namespace meshdiff
