// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

#include <Eigen/Core>

#include "meshdiff/mesh.hpp"

namespace meshdiff {

// Fixed connectivity of a problem instance. Vertices carry the coordinates;
// the topology never changes along a diffusion chain.
struct MeshTopology {
  int vertex_count = 0;
  std::vector<std::array<int, 2>> edges;
  std::vector<std::array<int, 3>> faces;

  // Derived symmetric adjacency over the edge list.
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> adjacency() const;

  // Throws when indices are out of range or a face edge is missing from the
  // edge list.
  void validate() const;
};

// Linear mesh-to-pose regressor: pose = weights * vertices, applied to each
// coordinate column. The synthetic construction uses convex rows (non-negative,
// summing to 1), which makes the map commute with similarity transforms.
struct MeshToPoseMap {
  Eigen::MatrixXd weights;  // J x V

  Eigen::Index joint_count() const { return weights.rows(); }
  Eigen::Index vertex_count() const { return weights.cols(); }
};

Mat3 apply_map(const MeshToPoseMap& f, const MeshSample& mesh);
Mat3 apply_map(const MeshToPoseMap& f, const Mat3& vertices);

struct ProcrustesResult {
  Mat3 aligned;
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::RowVector3d translation = Eigen::RowVector3d::Zero();
  // Set when the centered point set is (numerically) rank deficient; the
  // alignment is still returned using the det(+1) convention on the smallest
  // singular direction.
  bool degenerate = false;
};

// Similarity alignment of pred onto gt: argmin_{s>0, R in SO(3), t}
// ||s R pred + t - gt||_F, via centering and SVD of the cross covariance.
ProcrustesResult procrustes_align(const Mat3& pred, const Mat3& gt);

// Mean Euclidean distance per row. mpve and mpjpe share the formula and
// differ only in what the rows are.
double mpve(const Mat3& pred_mesh, const Mat3& gt_mesh);
double mpjpe(const Mat3& pred_pose, const Mat3& gt_pose);
double pa_mpjpe(const Mat3& pred_pose, const Mat3& gt_pose);

// Harmonic mean of precision and recall at the given distance threshold;
// returns 0 when both are 0.
double f_score(const Mat3& pred_points, const Mat3& gt_points, double threshold);

struct MetricReport {
  double mpve = 0.0;
  double mpjpe = 0.0;
  double pa_mpjpe = 0.0;
  double f_at_small = 0.0;
  double f_at_large = 0.0;
};

MetricReport evaluate_metrics(const Mat3& pred_mesh, const Mat3& gt_mesh,
                              const MeshToPoseMap& f, double small_threshold,
                              double large_threshold);

}  // namespace meshdiff
