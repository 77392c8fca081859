// SPDX-License-Identifier: Apache-2.0
#include "meshdiff/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace meshdiff {

namespace {

void require_step_in_range(int k, int K, const char* what) {
  if (k < 1 || k > K)
    throw std::invalid_argument(std::string(what) + ": step " + std::to_string(k) +
                                " outside [1, " + std::to_string(K) + "]");
}

}  // namespace

MeshSample forward_sample(const MeshSample& h0, int k, const NoiseSchedule& sched,
                          const GaussianNoise& z) {
  if (h0.step != 0)
    throw std::invalid_argument("forward_sample: input must be tagged step 0");
  require_step_in_range(k, sched.K, "forward_sample");
  require_same_shape(h0.vertices, z.z, "forward_sample");
  require_finite(h0.vertices, "forward_sample h0");
  const double a = sched.alphas[k];
  MeshSample out;
  out.vertices = std::sqrt(a) * h0.vertices + std::sqrt(1.0 - a) * z.z;
  out.step = k;
  return out;
}

MeshSample estimate_h0(const MeshSample& hk, const Mat3& eps_pred, int k,
                       const NoiseSchedule& sched) {
  require_step_in_range(k, sched.K, "estimate_h0");
  require_same_shape(hk.vertices, eps_pred, "estimate_h0");
  const double a = sched.alphas[k];
  if (!(a > 0.0))
    throw std::invalid_argument("estimate_h0: corrupted schedule (alpha_k <= 0)");
  MeshSample out;
  out.vertices = (hk.vertices - std::sqrt(1.0 - a) * eps_pred) / std::sqrt(a);
  out.step = 0;
  return out;
}

MeshSample reverse_step(const MeshSample& hk, int k_from, int k_to,
                        const Mat3& eps_pred, const NoiseSchedule& sched,
                        const GaussianNoise& z) {
  require_step_in_range(k_from, sched.K, "reverse_step");
  return reverse_step_with_sigma(hk, k_from, k_to, eps_pred, sched, z,
                                 sched.sigmas[k_from]);
}

MeshSample reverse_step_with_sigma(const MeshSample& hk, int k_from, int k_to,
                                   const Mat3& eps_pred, const NoiseSchedule& sched,
                                   const GaussianNoise& z, double sigma) {
  if (!(k_from > k_to && k_to >= 0))
    throw std::invalid_argument("reverse_step: need K >= k_from > k_to >= 0");
  require_step_in_range(k_from, sched.K, "reverse_step");
  require_same_shape(hk.vertices, eps_pred, "reverse_step eps");
  require_same_shape(hk.vertices, z.z, "reverse_step z");
  require_finite(eps_pred, "reverse_step eps");
  const double a_to = sched.alphas[k_to];
  const double dir_sq = 1.0 - a_to - sigma * sigma;
  if (dir_sq < -1e-12)
    throw std::invalid_argument(
        "reverse_step: sigma^2 > 1 - alpha[k_to]; schedule invalid for hop " +
        std::to_string(k_from) + " -> " + std::to_string(k_to));
  const MeshSample h0_hat = estimate_h0(hk, eps_pred, k_from, sched);
  MeshSample out;
  out.vertices = std::sqrt(std::max(dir_sq, 0.0)) * eps_pred +
                 std::sqrt(a_to) * h0_hat.vertices + sigma * z.z;
  out.step = k_to;
  return out;
}

}  // namespace meshdiff
