// SPDX-License-Identifier: Apache-2.0
#include "meshdiff/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace meshdiff {

Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> MeshTopology::adjacency() const {
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> adj(vertex_count, vertex_count);
  adj.setConstant(false);
  for (const auto& e : edges) {
    adj(e[0], e[1]) = true;
    adj(e[1], e[0]) = true;
  }
  return adj;
}

void MeshTopology::validate() const {
  if (vertex_count <= 0)
    throw std::invalid_argument("topology: vertex_count must be positive");
  auto check_index = [&](int v) {
    if (v < 0 || v >= vertex_count)
      throw std::invalid_argument("topology: index " + std::to_string(v) +
                                  " out of range");
  };
  std::set<std::pair<int, int>> edge_set;
  for (const auto& e : edges) {
    check_index(e[0]);
    check_index(e[1]);
    if (e[0] == e[1])
      throw std::invalid_argument("topology: degenerate edge (equal endpoints)");
    edge_set.insert({std::min(e[0], e[1]), std::max(e[0], e[1])});
  }
  for (const auto& f : faces) {
    for (int v : f) check_index(v);
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
      throw std::invalid_argument("topology: face with repeated vertex");
    for (int i = 0; i < 3; ++i) {
      const int a = f[i], b = f[(i + 1) % 3];
      if (!edge_set.count({std::min(a, b), std::max(a, b)}))
        throw std::invalid_argument(
            "topology: face edge missing from edge list");
    }
  }
}

Mat3 apply_map(const MeshToPoseMap& f, const Mat3& vertices) {
  if (f.weights.cols() != vertices.rows())
    throw std::invalid_argument("apply_map: map expects " +
                                std::to_string(f.weights.cols()) +
                                " vertices, got " +
                                std::to_string(vertices.rows()));
  return f.weights * vertices;
}

Mat3 apply_map(const MeshToPoseMap& f, const MeshSample& mesh) {
  return apply_map(f, mesh.vertices);
}

ProcrustesResult procrustes_align(const Mat3& pred, const Mat3& gt) {
  if (pred.rows() != gt.rows())
    throw std::invalid_argument("procrustes_align: shape mismatch");
  if (pred.rows() < 3)
    throw std::invalid_argument("procrustes_align: need at least 3 points");

  const Eigen::RowVector3d pred_mean = pred.colwise().mean();
  const Eigen::RowVector3d gt_mean = gt.colwise().mean();
  const Mat3 p = pred.rowwise() - pred_mean;
  const Mat3 g = gt.rowwise() - gt_mean;

  const Eigen::Matrix3d cross = p.transpose() * g;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cross,
                                        Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d u = svd.matrixU();
  const Eigen::Matrix3d v = svd.matrixV();
  const Eigen::Vector3d sv = svd.singularValues();

  ProcrustesResult res;
  // Reflection fix: negate the smallest singular direction when needed so
  // det(R) = +1.
  const double det_sign = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  Eigen::Vector3d d(1.0, 1.0, det_sign);
  res.rotation = v * d.asDiagonal() * u.transpose();

  const double pred_sq = p.squaredNorm();
  const double trace = sv[0] + sv[1] + det_sign * sv[2];
  res.degenerate = pred_sq <= 0.0 ||
                   sv[1] <= sv[0] * std::numeric_limits<double>::epsilon() * 64;
  res.scale = pred_sq > 0.0 ? std::max(trace / pred_sq, 0.0) : 1.0;
  if (res.scale == 0.0) res.scale = 1.0;

  res.aligned = res.scale * (p * res.rotation.transpose());
  res.aligned.rowwise() += gt_mean;
  res.translation = gt_mean - res.scale * (pred_mean * res.rotation.transpose());
  return res;
}

double mpve(const Mat3& pred_mesh, const Mat3& gt_mesh) {
  if (pred_mesh.rows() != gt_mesh.rows())
    throw std::invalid_argument("mpve: shape mismatch");
  return (pred_mesh - gt_mesh).rowwise().norm().mean();
}

double mpjpe(const Mat3& pred_pose, const Mat3& gt_pose) {
  if (pred_pose.rows() != gt_pose.rows())
    throw std::invalid_argument("mpjpe: shape mismatch");
  return (pred_pose - gt_pose).rowwise().norm().mean();
}

double pa_mpjpe(const Mat3& pred_pose, const Mat3& gt_pose) {
  return mpjpe(procrustes_align(pred_pose, gt_pose).aligned, gt_pose);
}

double f_score(const Mat3& pred_points, const Mat3& gt_points, double threshold) {
  if (pred_points.rows() == 0 || gt_points.rows() == 0)
    throw std::invalid_argument("f_score: empty point set");
  if (!(threshold > 0.0))
    throw std::invalid_argument("f_score: threshold must be positive");

  auto fraction_within = [&](const Mat3& from, const Mat3& to) {
    Eigen::Index hits = 0;
    for (Eigen::Index i = 0; i < from.rows(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < to.rows(); ++j)
        best = std::min(best, (from.row(i) - to.row(j)).norm());
      if (best <= threshold) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(from.rows());
  };

  const double precision = fraction_within(pred_points, gt_points);
  const double recall = fraction_within(gt_points, pred_points);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

MetricReport evaluate_metrics(const Mat3& pred_mesh, const Mat3& gt_mesh,
                              const MeshToPoseMap& f, double small_threshold,
                              double large_threshold) {
  MetricReport r;
  r.mpve = mpve(pred_mesh, gt_mesh);
  const Mat3 pred_pose = apply_map(f, pred_mesh);
  const Mat3 gt_pose = apply_map(f, gt_mesh);
  r.mpjpe = mpjpe(pred_pose, gt_pose);
  r.pa_mpjpe = pa_mpjpe(pred_pose, gt_pose);
  r.f_at_small = f_score(pred_mesh, gt_mesh, small_threshold);
  r.f_at_large = f_score(pred_mesh, gt_mesh, large_threshold);
  return r;
}

}  // namespace meshdiff
