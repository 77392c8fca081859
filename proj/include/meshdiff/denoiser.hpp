// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "meshdiff/models.hpp"

namespace meshdiff {

struct TokenDenoiserConfig {
  int vertex_count = 0;
  int d_id = 16;    // vertex ID embedding width
  int d_step = 15;  // sinusoidal step embedding width
  int d_ctx = 16;   // context token width
  double init_scale = 1.0;
  std::uint64_t init_seed = 1;

  int token_dim() const { return d_id + d_step + 3; }
};

// Sinusoidal position encoding of the step index; odd widths get a trailing
// unpaired sine channel.
Eigen::RowVectorXd sinusoidal_step_embedding(int k, int dim);

// Per-vertex token denoiser: each vertex becomes a token
// [ID embedding | step embedding | coordinates], processed by one vertex
// self-attention layer, one vertex-context cross-attention layer (both with
// residual connections), and a linear projection back to 3 coordinates.
// Backpropagation is derived by hand for this fixed architecture.
class TokenDenoiser final : public ScoreModel {
 public:
  explicit TokenDenoiser(const TokenDenoiserConfig& config);

  Mat3 evaluate(const MeshSample& hk, int k,
                const ContextFeature& ctx) const override;
  Mat3 vjp(const MeshSample& hk, int k, const ContextFeature& ctx,
           const Mat3& cotangent) const override;

  // Gradients ordered like parameters(). When d_input is non-null it receives
  // the gradient with respect to the vertex coordinates.
  std::vector<Eigen::MatrixXd> backward(const MeshSample& hk, int k,
                                        const ContextFeature& ctx,
                                        const Mat3& cotangent,
                                        Mat3* d_input = nullptr) const;

  std::vector<Eigen::MatrixXd*> parameters();
  std::vector<const Eigen::MatrixXd*> parameters() const;
  static std::vector<std::string> parameter_names();
  std::size_t parameter_count() const;

  const TokenDenoiserConfig& config() const { return config_; }

 private:
  struct Cache;
  Cache forward(const MeshSample& hk, int k, const ContextFeature& ctx) const;

  TokenDenoiserConfig config_;
  Eigen::MatrixXd id_embed_;   // V x d_id
  Eigen::MatrixXd self_wq_;    // d x d
  Eigen::MatrixXd self_wk_;    // d x d
  Eigen::MatrixXd self_wv_;    // d x d
  Eigen::MatrixXd cross_wq_;   // d x d
  Eigen::MatrixXd cross_wk_;   // d_ctx x d
  Eigen::MatrixXd cross_wv_;   // d_ctx x d
  Eigen::MatrixXd out_w_;      // d x 3
  Eigen::MatrixXd out_b_;      // 1 x 3
};

}  // namespace meshdiff
