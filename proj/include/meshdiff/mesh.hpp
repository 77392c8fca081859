// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include "meshdiff/rng.hpp"

namespace meshdiff {

// Rows are vertices (or joints), columns are xyz.
using Mat3 = Eigen::MatrixX3d;

// A diffusion state: vertex coordinates tagged with the index k of the
// distribution the sample nominally belongs to (k=0 is the clean mesh).
struct MeshSample {
  Mat3 vertices;
  int step = 0;

  Eigen::Index vertex_count() const { return vertices.rows(); }
};

// i.i.d. standard normal draws shaped like a mesh.
struct GaussianNoise {
  Mat3 z;
};

GaussianNoise draw_noise(Eigen::Index vertex_count, Rng& rng);

void require_finite(const Mat3& m, const char* what);
void require_same_shape(const Mat3& a, const Mat3& b, const char* what);

}  // namespace meshdiff
