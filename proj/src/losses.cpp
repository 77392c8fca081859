// SPDX-License-Identifier: Apache-2.0
#include "meshdiff/losses.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Geometry>

#include "meshdiff/diffusion.hpp"

namespace meshdiff {

namespace {

constexpr double kDegenerateSq = 1e-24;

inline double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

Eigen::Vector3d gt_face_normal(const Mat3& gt, const std::array<int, 3>& face,
                               bool& degenerate) {
  const Eigen::Vector3d a = gt.row(face[0]);
  const Eigen::Vector3d b = gt.row(face[1]);
  const Eigen::Vector3d c = gt.row(face[2]);
  Eigen::Vector3d n = (b - a).cross(c - a);
  const double len = n.norm();
  degenerate = len * len < kDegenerateSq;
  if (!degenerate) n /= len;
  return n;
}

}  // namespace

double diffusion_loss(const ScoreModel& model, const MeshSample& h0, int k,
                      const GaussianNoise& z, const NoiseSchedule& sched,
                      const ContextFeature& ctx, DiffusionTarget target) {
  if (k < 1 || k > sched.K)
    throw std::invalid_argument("diffusion_loss: step out of range");
  require_same_shape(h0.vertices, z.z, "diffusion_loss");
  const MeshSample hk = forward_sample(h0, k, sched, z);
  const Mat3 pred = model.evaluate(hk, k, ctx);
  if (target == DiffusionTarget::epsilon) return (z.z - pred).squaredNorm();
  // Both states share the same draw z, matching the printed difference target.
  const double a_prev = sched.alphas[k - 1];
  const Mat3 h_prev = std::sqrt(a_prev) * h0.vertices + std::sqrt(1.0 - a_prev) * z.z;
  return ((h_prev - hk.vertices) - pred).squaredNorm();
}

GeometryLosses geometry_losses(const MeshSample& h0_hat, const MeshSample& gt,
                               const MeshTopology& topo, const MeshToPoseMap& f) {
  const Mat3& pred = h0_hat.vertices;
  const Mat3& truth = gt.vertices;
  if (pred.rows() != topo.vertex_count || truth.rows() != topo.vertex_count)
    throw std::invalid_argument("geometry_losses: shapes do not match topology");

  GeometryLosses out;
  // Mean absolute per-vertex error, measured as the Euclidean distance of
  // each vertex; a uniform translation d therefore gives exactly |d|.
  out.l_v = (pred - truth).rowwise().norm().mean();

  const Mat3 pred_pose = apply_map(f, pred);
  const Mat3 gt_pose = apply_map(f, truth);
  out.l_j = (pred_pose - gt_pose).rowwise().norm().mean();

  double normal_sum = 0.0;
  int normal_terms = 0;
  for (const auto& face : topo.faces) {
    bool degenerate = false;
    const Eigen::Vector3d n = gt_face_normal(truth, face, degenerate);
    if (degenerate) {
      ++out.degenerate_faces;
      continue;
    }
    for (int i = 0; i < 3; ++i) {
      const Eigen::Vector3d e =
          pred.row(face[(i + 1) % 3]) - pred.row(face[i]);
      const double len = e.norm();
      if (len * len < kDegenerateSq) continue;
      normal_sum += std::abs(e.dot(n) / len);
      ++normal_terms;
    }
  }
  out.l_n = normal_terms > 0 ? normal_sum / normal_terms : 0.0;

  double edge_sum = 0.0;
  for (const auto& edge : topo.edges) {
    const double lp = (pred.row(edge[1]) - pred.row(edge[0])).norm();
    const double lg = (truth.row(edge[1]) - truth.row(edge[0])).norm();
    edge_sum += std::abs(lp - lg);
  }
  out.l_e = topo.edges.empty() ? 0.0 : edge_sum / static_cast<double>(topo.edges.size());
  return out;
}

Mat3 geometry_loss_gradient(const MeshSample& h0_hat, const MeshSample& gt,
                            const MeshTopology& topo, const MeshToPoseMap& f,
                            const LossWeights& weights) {
  const Mat3& pred = h0_hat.vertices;
  const Mat3& truth = gt.vertices;
  const Eigen::Index v_count = pred.rows();
  Mat3 grad = Mat3::Zero(v_count, 3);

  const double inv_vertices = 1.0 / static_cast<double>(pred.rows());
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    const Eigen::RowVector3d err = pred.row(i) - truth.row(i);
    const double len = err.norm();
    if (len * len < kDegenerateSq) continue;
    grad.row(i) += (weights.lambda_v * inv_vertices / len) * err;
  }

  const Mat3 pose_diff = apply_map(f, pred) - apply_map(f, truth);
  Mat3 pose_dir = Mat3::Zero(pose_diff.rows(), 3);
  for (Eigen::Index j = 0; j < pose_diff.rows(); ++j) {
    const double len = pose_diff.row(j).norm();
    if (len * len < kDegenerateSq) continue;
    pose_dir.row(j) = pose_diff.row(j) / len;
  }
  grad += (weights.lambda_j / static_cast<double>(pose_diff.rows())) *
          (f.weights.transpose() * pose_dir);

  // Normal term: d|u.n|/de = sign(u.n) (n - (u.n) u) / |e| with u = e/|e|.
  int normal_terms = 0;
  std::vector<std::pair<std::array<int, 2>, Eigen::Vector3d>> normal_contribs;
  for (const auto& face : topo.faces) {
    bool degenerate = false;
    const Eigen::Vector3d n = gt_face_normal(truth, face, degenerate);
    if (degenerate) continue;
    for (int i = 0; i < 3; ++i) {
      const int a = face[i], b = face[(i + 1) % 3];
      const Eigen::Vector3d e = pred.row(b) - pred.row(a);
      const double len = e.norm();
      if (len * len < kDegenerateSq) continue;
      const Eigen::Vector3d u = e / len;
      const double dot = u.dot(n);
      normal_contribs.push_back({{a, b}, sgn(dot) * (n - dot * u) / len});
      ++normal_terms;
    }
  }
  if (normal_terms > 0) {
    const double w = weights.lambda_n / static_cast<double>(normal_terms);
    for (const auto& [idx, de] : normal_contribs) {
      grad.row(idx[1]) += w * de.transpose();
      grad.row(idx[0]) -= w * de.transpose();
    }
  }

  if (!topo.edges.empty()) {
    const double w = weights.lambda_e / static_cast<double>(topo.edges.size());
    for (const auto& edge : topo.edges) {
      const Eigen::Vector3d e = pred.row(edge[1]) - pred.row(edge[0]);
      const double lp = e.norm();
      if (lp * lp < kDegenerateSq) continue;
      const double lg = (truth.row(edge[1]) - truth.row(edge[0])).norm();
      const Eigen::Vector3d de = sgn(lp - lg) * e / lp;
      grad.row(edge[1]) += w * de.transpose();
      grad.row(edge[0]) -= w * de.transpose();
    }
  }
  return grad;
}

double total_loss(double l_diff, const GeometryLosses& parts,
                  const LossWeights& weights) {
  return l_diff + weights.lambda_v * parts.l_v + weights.lambda_j * parts.l_j +
         weights.lambda_n * parts.l_n + weights.lambda_e * parts.l_e;
}

}  // namespace meshdiff
