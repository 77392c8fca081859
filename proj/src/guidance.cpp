// SPDX-License-Identifier: Apache-2.0
#include "meshdiff/guidance.hpp"

#include <cmath>
#include <stdexcept>

#include "meshdiff/diffusion.hpp"
#include "meshdiff/rng.hpp"

namespace meshdiff {

void PriorDistribution::validate() const {
  if (samples.empty())
    throw std::invalid_argument("prior: needs at least one sample");
  const Eigen::Index joints = samples.front().rows();
  for (const auto& u : samples) {
    if (u.rows() != joints)
      throw std::invalid_argument("prior: samples disagree on joint count");
    require_finite(u, "prior sample");
  }
  if (noise_level < 0.0)
    throw std::invalid_argument("prior: noise_level must be >= 0");
}

double gap(const MeshSample& h0_hat, const PriorDistribution& prior,
           const MeshToPoseMap& f) {
  if (h0_hat.step != 0)
    throw std::invalid_argument("gap: estimate must be tagged step 0");
  prior.validate();
  const Mat3 pose = apply_map(f, h0_hat);
  if (pose.rows() != prior.samples.front().rows())
    throw std::invalid_argument("gap: pose map output does not match prior joints");
  double total = 0.0;
  for (const auto& u : prior.samples) total += (u - pose).squaredNorm();
  return total;
}

namespace {

// d gap / d h0_hat = f^T sum_i 2 (f(h0_hat) - u_i).
Mat3 gap_gradient_wrt_estimate(const Mat3& estimate, const PriorDistribution& prior,
                               const MeshToPoseMap& f) {
  const Mat3 pose = f.weights * estimate;
  Mat3 pose_grad = Mat3::Zero(pose.rows(), 3);
  for (const auto& u : prior.samples) pose_grad += 2.0 * (pose - u);
  return f.weights.transpose() * pose_grad;
}

}  // namespace

Mat3 alignment_gradient(const MeshSample& hk, int k, const ScoreModel& model,
                        const ContextFeature& ctx, const PriorDistribution& prior,
                        const MeshToPoseMap& f, const NoiseSchedule& sched,
                        GradientMode mode) {
  if (k < 1 || k > sched.K)
    throw std::invalid_argument("alignment_gradient: step out of range");
  const double a = sched.alphas[k];
  const Mat3 eps = model.evaluate(hk, k, ctx);
  const MeshSample h0_hat = estimate_h0(hk, eps, k, sched);
  const Mat3 g = gap_gradient_wrt_estimate(h0_hat.vertices, prior, f);
  if (mode == GradientMode::stop_gradient) return g / std::sqrt(a);
  // Chain rule through h0_hat = (h_k - sqrt(1-a) model(h_k)) / sqrt(a).
  const Mat3 through_model = model.vjp(hk, k, ctx, g);
  return (g - std::sqrt(1.0 - a) * through_model) / std::sqrt(a);
}

ChainResult run_chain(const MeshSample& hK, const ScoreModel& model,
                      const ContextFeature& ctx, const PriorDistribution& prior,
                      const MeshToPoseMap& f, const NoiseSchedule& sched,
                      const GuidanceConfig& cfg, ChainVariant variant,
                      std::uint64_t rng_seed) {
  sched.validate();
  prior.validate();
  if (hK.step != sched.K)
    throw std::invalid_argument("run_chain: input must be tagged step K");
  if (!(cfg.r > 0.0) || !std::isfinite(cfg.r))
    throw std::invalid_argument("run_chain: r must be positive and finite");
  if (!std::isfinite(cfg.gamma))
    throw std::invalid_argument("run_chain: gamma must be finite");
  require_finite(hK.vertices, "run_chain hK");

  Rng rng(rng_seed);
  const double guidance_scale =
      cfg.normalize_by_n ? cfg.gamma / static_cast<double>(prior.samples.size())
                         : cfg.gamma;

  ChainResult result;
  result.trace.rows.reserve(sched.steps.size());

  MeshSample h = hK;
  double first_gap = 0.0;
  bool latch_open = true;

  for (std::size_t i = 0; i < sched.steps.size(); ++i) {
    const int k = sched.steps[i];
    const int k_next = (i + 1 < sched.steps.size()) ? sched.steps[i + 1] : 0;
    // The terminal hop to step 0 runs noise-free.
    const double sigma = k_next == 0 ? 0.0 : sched.sigmas[k];

    const Mat3 eps = model.evaluate(h, k, ctx);
    const MeshSample h0_hat = estimate_h0(h, eps, k, sched);
    const double d_k = gap(h0_hat, prior, f);
    if (i == 0) first_gap = d_k;
    const double r_k = first_gap > 0.0 ? d_k / first_gap : (d_k == 0.0 ? 1.0 : 0.0);

    bool guide = false;
    switch (variant) {
      case ChainVariant::unguided:
        break;
      case ChainVariant::dat:
        if (r_k >= cfg.r && latch_open)
          guide = true;
        else
          latch_open = false;
        break;
      case ChainVariant::dat_no_activation:
        guide = true;
        break;
      case ChainVariant::disrupted:
        if (r_k >= cfg.r && latch_open)
          guide = true;
        else
          latch_open = false;
        break;
    }

    // Draw unconditionally so every variant consumes the same stream.
    const GaussianNoise z = draw_noise(h.vertex_count(), rng);

    TraceRow row;
    row.k = k;
    row.gap = d_k;
    row.relative_gap = r_k;
    row.act = guide;
    row.h0_hat = h0_hat.vertices;
    row.h_k = h.vertices;
    result.trace.rows.push_back(std::move(row));

    MeshSample next = reverse_step_with_sigma(h, k, k_next, eps, sched, z, sigma);
    if (guide) {
      Mat3 grad;
      if (variant == ChainVariant::disrupted) {
        // Direct alignment of h_k itself: the gap gradient evaluated at h_k,
        // not through h0_hat.
        grad = gap_gradient_wrt_estimate(h.vertices, prior, f);
      } else {
        grad = alignment_gradient(h, k, model, ctx, prior, f, sched,
                                  cfg.gradient_mode);
      }
      if (!grad.allFinite())
        throw std::runtime_error(
            "run_chain: non-finite guidance gradient at step k=" +
            std::to_string(k));
      next.vertices -= guidance_scale * grad;
    }
    h = std::move(next);
  }

  h.step = 0;
  result.final = std::move(h);
  return result;
}

ChainResult dat_reverse_process(const MeshSample& hK, const ScoreModel& model,
                                const ContextFeature& ctx,
                                const PriorDistribution& prior,
                                const MeshToPoseMap& f, const NoiseSchedule& sched,
                                const GuidanceConfig& cfg, std::uint64_t rng_seed) {
  return run_chain(hK, model, ctx, prior, f, sched, cfg, ChainVariant::dat,
                   rng_seed);
}

EnsembleResult run_ensemble(Eigen::Index vertex_count, const ScoreModel& model,
                            const ContextFeature& ctx,
                            const PriorDistribution& prior, const MeshToPoseMap& f,
                            const NoiseSchedule& sched, const GuidanceConfig& cfg,
                            ChainVariant variant, std::uint64_t base_seed) {
  if (cfg.num_chains < 1)
    throw std::invalid_argument("run_ensemble: num_chains must be >= 1");
  EnsembleResult out;
  for (int c = 0; c < cfg.num_chains; ++c) {
    const std::uint64_t init_seed = mix_seed(base_seed, 2 * c);
    const std::uint64_t chain_seed = mix_seed(base_seed, 2 * c + 1);
    try {
      Rng init_rng(init_seed);
      MeshSample hK;
      hK.vertices = init_rng.normal_matrix(vertex_count, 3);
      hK.step = sched.K;
      ChainResult r =
          run_chain(hK, model, ctx, prior, f, sched, cfg, variant, chain_seed);
      out.samples.push_back(std::move(r.final));
      out.traces.push_back(std::move(r.trace));
    } catch (const std::exception& e) {
      out.failures.emplace_back(c, e.what());
    }
  }
  return out;
}

}  // namespace meshdiff
