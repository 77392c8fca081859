// SPDX-License-Identifier: Apache-2.0
#include "meshdiff/mesh.hpp"

#include <stdexcept>
#include <string>

namespace meshdiff {

GaussianNoise draw_noise(Eigen::Index vertex_count, Rng& rng) {
  GaussianNoise n;
  n.z = rng.normal_matrix(vertex_count, 3);
  return n;
}

void require_finite(const Mat3& m, const char* what) {
  if (!m.allFinite())
    throw std::invalid_argument(std::string(what) + ": non-finite entries");
}

void require_same_shape(const Mat3& a, const Mat3& b, const char* what) {
  if (a.rows() != b.rows())
    throw std::invalid_argument(std::string(what) + ": shape mismatch (" +
                                std::to_string(a.rows()) + " vs " +
                                std::to_string(b.rows()) + " rows)");
}

}  // namespace meshdiff
