// SPDX-License-Identifier: Apache-2.0
#include "meshdiff/models.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace meshdiff {

AnalyticGaussianScore::AnalyticGaussianScore(Mat3 target_mean, Mat3 target_variance,
                                             NoiseSchedule sched)
    : mean_(std::move(target_mean)),
      variance_(std::move(target_variance)),
      sched_(std::move(sched)) {
  require_same_shape(mean_, variance_, "AnalyticGaussianScore");
  if ((variance_.array() <= 0.0).any())
    throw std::invalid_argument("AnalyticGaussianScore: variances must be positive");
  sched_.validate();
}

Mat3 AnalyticGaussianScore::evaluate(const MeshSample& hk, int k,
                                     const ContextFeature&) const {
  if (k < 1 || k > sched_.K)
    throw std::invalid_argument("AnalyticGaussianScore: step out of range");
  require_same_shape(hk.vertices, mean_, "AnalyticGaussianScore::evaluate");
  const double a = sched_.alphas[k];
  // Marginal at step k is N(sqrt(a) mean, a var + (1 - a)); epsilon is the
  // negated score scaled by sqrt(1 - a).
  const Mat3 denom = (a * variance_.array() + (1.0 - a)).matrix();
  return (std::sqrt(1.0 - a) * (hk.vertices - std::sqrt(a) * mean_).array() /
          denom.array())
      .matrix();
}

Mat3 AnalyticGaussianScore::vjp(const MeshSample&, int k, const ContextFeature&,
                                const Mat3& cotangent) const {
  if (k < 1 || k > sched_.K)
    throw std::invalid_argument("AnalyticGaussianScore: step out of range");
  require_same_shape(cotangent, mean_, "AnalyticGaussianScore::vjp");
  const double a = sched_.alphas[k];
  const Mat3 denom = (a * variance_.array() + (1.0 - a)).matrix();
  // The Jacobian is diagonal: sqrt(1 - a) / (a var + 1 - a) per coordinate.
  return (cotangent.array() * std::sqrt(1.0 - a) / denom.array()).matrix();
}

MeshSample aggregate_prediction(const std::vector<MeshSample>& samples,
                                const RefinementHead* head) {
  if (samples.empty())
    throw std::invalid_argument("aggregate_prediction: empty sample list");
  Mat3 mean = Mat3::Zero(samples.front().vertices.rows(), 3);
  for (const auto& s : samples) {
    require_same_shape(s.vertices, mean, "aggregate_prediction");
    mean += s.vertices;
  }
  mean /= static_cast<double>(samples.size());
  MeshSample out;
  out.vertices = (head && *head) ? (*head)(mean) : mean;
  out.step = 0;
  return out;
}

}  // namespace meshdiff
