// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "meshdiff/geometry.hpp"
#include "meshdiff/mesh.hpp"
#include "meshdiff/models.hpp"
#include "meshdiff/schedule.hpp"

namespace meshdiff {

struct LossWeights {
  double lambda_v = 1.0;
  double lambda_j = 1.0;
  double lambda_n = 0.1;
  double lambda_e = 0.1;
};

enum class DiffusionTarget { epsilon, step_difference };

// Reconstruction loss of the denoiser at a sampled step. epsilon mode scores
// the noise prediction against the drawn noise; step_difference scores the
// prediction against h_{k-1} - h_k with both states formed from h0 under the
// shared draw z.
double diffusion_loss(const ScoreModel& model, const MeshSample& h0, int k,
                      const GaussianNoise& z, const NoiseSchedule& sched,
                      const ContextFeature& ctx, DiffusionTarget target);

struct GeometryLosses {
  double l_v = 0.0;  // mean absolute vertex error
  double l_j = 0.0;  // mean absolute joint error through the pose map
  double l_n = 0.0;  // mean |<unit predicted edge, gt face normal>| over face edges
  double l_e = 0.0;  // mean absolute edge-length difference
  int degenerate_faces = 0;  // zero-area ground-truth faces skipped
};

GeometryLosses geometry_losses(const MeshSample& h0_hat, const MeshSample& gt,
                               const MeshTopology& topo, const MeshToPoseMap& f);

// Gradient of lambda_v L_v + lambda_j L_j + lambda_n L_n + lambda_e L_e with
// respect to the predicted vertices (subgradients at the absolute-value kinks).
Mat3 geometry_loss_gradient(const MeshSample& h0_hat, const MeshSample& gt,
                            const MeshTopology& topo, const MeshToPoseMap& f,
                            const LossWeights& weights);

double total_loss(double l_diff, const GeometryLosses& parts,
                  const LossWeights& weights);

}  // namespace meshdiff
