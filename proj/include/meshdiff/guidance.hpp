// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "meshdiff/geometry.hpp"
#include "meshdiff/mesh.hpp"
#include "meshdiff/models.hpp"
#include "meshdiff/schedule.hpp"

namespace meshdiff {

// Pose prior: a set of noisy pose samples standing in for a pose-estimator
// output, related to the clean mesh by f(h0) + n = u.
struct PriorDistribution {
  std::vector<Mat3> samples;  // each J x 3
  double noise_level = 0.0;

  void validate() const;
};

enum class GradientMode { full, stop_gradient };

struct GuidanceConfig {
  // Relative-gap activation threshold; production configs keep r in (0, 1),
  // values >= 1 are accepted so the threshold edge can be exercised.
  double r = 0.05;
  double gamma = 0.2;
  GradientMode gradient_mode = GradientMode::full;
  int num_chains = 25;
  // Scales the guidance term by 1/N; the raw update follows the printed
  // algorithm, but the gap sums over N prior samples, so its gradient grows
  // linearly in N.
  bool normalize_by_n = false;
};

struct TraceRow {
  int k = 0;
  double gap = 0.0;           // D_k
  double relative_gap = 0.0;  // R_k = D_k / D_K
  bool act = false;           // whether the guided update was applied
  Mat3 h0_hat;
  Mat3 h_k;
};

struct DiffusionTrace {
  std::vector<TraceRow> rows;
};

// Gap between a clean-mesh estimate and the prior: sum over prior samples of
// the squared Euclidean norm of u_i - f(h0_hat).
double gap(const MeshSample& h0_hat, const PriorDistribution& prior,
           const MeshToPoseMap& f);

// Gradient of the gap with respect to the noisy state at step k, where the
// clean estimate is h0_hat(h_k) through the model. full mode routes the chain
// rule through the model's vjp; stop_gradient holds the model output fixed so
// d h0_hat / d h_k = I / sqrt(alpha_k).
Mat3 alignment_gradient(const MeshSample& hk, int k, const ScoreModel& model,
                        const ContextFeature& ctx, const PriorDistribution& prior,
                        const MeshToPoseMap& f, const NoiseSchedule& sched,
                        GradientMode mode);

// Reverse-process variants driven by one chain loop. dat applies the guided
// update while the relative gap stays above r, with a one-way latch;
// dat_no_activation guides at every step; disrupted modifies h_k directly
// with the gap gradient taken at h_k itself; unguided never guides.
enum class ChainVariant { unguided, dat, dat_no_activation, disrupted };

struct ChainResult {
  MeshSample final;
  DiffusionTrace trace;
};

ChainResult run_chain(const MeshSample& hK, const ScoreModel& model,
                      const ContextFeature& ctx, const PriorDistribution& prior,
                      const MeshToPoseMap& f, const NoiseSchedule& sched,
                      const GuidanceConfig& cfg, ChainVariant variant,
                      std::uint64_t rng_seed);

// The guided reverse process exactly as the activation-gated algorithm
// prescribes; equivalent to run_chain with the dat variant.
ChainResult dat_reverse_process(const MeshSample& hK, const ScoreModel& model,
                                const ContextFeature& ctx,
                                const PriorDistribution& prior,
                                const MeshToPoseMap& f, const NoiseSchedule& sched,
                                const GuidanceConfig& cfg, std::uint64_t rng_seed);

struct EnsembleResult {
  std::vector<MeshSample> samples;
  std::vector<DiffusionTrace> traces;
  // (chain index, message) for chains that threw; surviving chains complete.
  std::vector<std::pair<int, std::string>> failures;
};

// cfg.num_chains independent chains from independently seeded h_K draws;
// chain c uses the stream derived from (base_seed, c).
EnsembleResult run_ensemble(Eigen::Index vertex_count, const ScoreModel& model,
                            const ContextFeature& ctx,
                            const PriorDistribution& prior, const MeshToPoseMap& f,
                            const NoiseSchedule& sched, const GuidanceConfig& cfg,
                            ChainVariant variant, std::uint64_t base_seed);

}  // namespace meshdiff
