// SPDX-License-Identifier: Apache-2.0
#include "meshdiff/train.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "meshdiff/diffusion.hpp"
#include "meshdiff/rng.hpp"

namespace meshdiff {

AdamOptimizer::AdamOptimizer(std::vector<Eigen::MatrixXd*> params,
                             const AdamConfig& config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto* p : params_) {
    m_.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
    v_.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
  }
}

void AdamOptimizer::step(const std::vector<Eigen::MatrixXd>& grads) {
  if (grads.size() != params_.size())
    throw std::invalid_argument("AdamOptimizer: gradient list size mismatch");
  ++t_;
  const double bias1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grads[i];
    v_[i] = config_.beta2 * v_[i] +
            (1.0 - config_.beta2) * grads[i].cwiseProduct(grads[i]);
    const Eigen::MatrixXd m_hat = m_[i] / bias1;
    const Eigen::MatrixXd v_hat = v_[i] / bias2;
    *params_[i] -= (config_.learning_rate * m_hat.array() /
                    (v_hat.array().sqrt() + config_.epsilon))
                       .matrix();
  }
}

std::vector<LossCurveRow> train(TokenDenoiser& model,
                                std::span<const ProblemInstance> instances,
                                const NoiseSchedule& sched, const LossWeights& weights,
                                const TrainConfig& config) {
  if (instances.empty()) throw std::invalid_argument("train: empty dataset");
  if (config.updates < 1 || config.batch_size < 1)
    throw std::invalid_argument("train: updates and batch_size must be >= 1");
  for (const auto& inst : instances)
    if (inst.gt_mesh.vertex_count() != model.config().vertex_count)
      throw std::invalid_argument("train: instance vertex count does not match model");

  AdamOptimizer optim(model.parameters(), config.adam);
  Rng rng(mix_seed(config.seed, 0x747261696eull));
  std::vector<LossCurveRow> curve;
  curve.reserve(config.updates);

  const std::size_t n_params = model.parameters().size();
  for (int update = 0; update < config.updates; ++update) {
    std::vector<Eigen::MatrixXd> grad_sum;
    grad_sum.reserve(n_params);
    for (const auto* p : std::as_const(model).parameters())
      grad_sum.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));

    LossCurveRow row;
    row.update = update;
    for (int b = 0; b < config.batch_size; ++b) {
      const auto& inst =
          instances[rng.uniform_int(0, static_cast<std::int64_t>(instances.size()) - 1)];
      const int k = static_cast<int>(rng.uniform_int(1, sched.K));
      const GaussianNoise z = draw_noise(inst.gt_mesh.vertex_count(), rng);
      const MeshSample hk = forward_sample(inst.gt_mesh, k, sched, z);
      const Mat3 pred = model.evaluate(hk, k, inst.context);

      Mat3 target_vec;
      if (config.target == DiffusionTarget::epsilon) {
        target_vec = z.z;
      } else {
        const double a_prev = sched.alphas[k - 1];
        target_vec = (std::sqrt(a_prev) * inst.gt_mesh.vertices +
                      std::sqrt(1.0 - a_prev) * z.z) -
                     hk.vertices;
      }
      const double l_diff = (target_vec - pred).squaredNorm();

      // Geometry terms act on the one-shot clean estimate implied by the
      // prediction; their gradient reaches the model through
      // d h0_hat / d pred = -sqrt(1-a)/sqrt(a).
      const MeshSample h0_hat = estimate_h0(hk, pred, k, sched);
      const GeometryLosses geo =
          geometry_losses(h0_hat, inst.gt_mesh, inst.topology, inst.pose_map);
      const Mat3 geo_grad = geometry_loss_gradient(h0_hat, inst.gt_mesh,
                                                   inst.topology, inst.pose_map,
                                                   weights);
      const double a = sched.alphas[k];
      const Mat3 cot =
          2.0 * (pred - target_vec) - (std::sqrt(1.0 - a) / std::sqrt(a)) * geo_grad;

      const std::vector<Eigen::MatrixXd> grads =
          model.backward(hk, k, inst.context, cot);
      for (std::size_t i = 0; i < n_params; ++i) grad_sum[i] += grads[i];

      row.l_diff += l_diff;
      row.l_v += geo.l_v;
      row.l_j += geo.l_j;
      row.l_n += geo.l_n;
      row.l_e += geo.l_e;
      row.total += total_loss(l_diff, geo, weights);
    }

    const double inv_batch = 1.0 / static_cast<double>(config.batch_size);
    row.l_diff *= inv_batch;
    row.l_v *= inv_batch;
    row.l_j *= inv_batch;
    row.l_n *= inv_batch;
    row.l_e *= inv_batch;
    row.total *= inv_batch;
    for (auto& g : grad_sum) g *= inv_batch;

    if (!(row.total < config.divergence_limit))
      throw std::runtime_error("train: diverged at update " +
                               std::to_string(update) + " (batch loss " +
                               std::to_string(row.total) + ")");
    optim.step(grad_sum);
    curve.push_back(row);
  }
  return curve;
}

}  // namespace meshdiff
