// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include <Eigen/Core>

#include "meshdiff/mesh.hpp"
#include "meshdiff/schedule.hpp"

namespace meshdiff {

// Conditioning signal standing in for an image feature: a fixed set of
// context tokens per problem instance.
struct ContextFeature {
  Eigen::MatrixXd tokens;  // n_ctx x d_ctx
};

// Noise-prediction interface. evaluate returns the epsilon estimate for the
// state at step k; vjp is the vector-Jacobian product of evaluate with
// respect to the vertex coordinates, which guidance needs to differentiate
// through the model.
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;

  virtual Mat3 evaluate(const MeshSample& hk, int k,
                        const ContextFeature& ctx) const = 0;
  virtual Mat3 vjp(const MeshSample& hk, int k, const ContextFeature& ctx,
                   const Mat3& cotangent) const = 0;
};

// Exact epsilon predictor for a Gaussian target N(mean, diag(variance))
// diffused through the schedule. Used as the verification oracle: the
// implied h0 estimate is the closed-form posterior mean, and the reverse
// chain must reproduce the target moments.
class AnalyticGaussianScore final : public ScoreModel {
 public:
  AnalyticGaussianScore(Mat3 target_mean, Mat3 target_variance,
                        NoiseSchedule sched);

  Mat3 evaluate(const MeshSample& hk, int k,
                const ContextFeature& ctx) const override;
  Mat3 vjp(const MeshSample& hk, int k, const ContextFeature& ctx,
           const Mat3& cotangent) const override;

  const Mat3& target_mean() const { return mean_; }
  const Mat3& target_variance() const { return variance_; }

 private:
  Mat3 mean_;
  Mat3 variance_;  // per-coordinate variances
  NoiseSchedule sched_;
};

// Optional post-aggregation refinement; identity when absent.
using RefinementHead = std::function<Mat3(const Mat3&)>;

// Coordinate-wise mean of an ensemble of clean samples, optionally refined.
MeshSample aggregate_prediction(const std::vector<MeshSample>& samples,
                                const RefinementHead* head = nullptr);

}  // namespace meshdiff
