// SPDX-License-Identifier: Apache-2.0
#include "meshdiff/denoiser.hpp"

#include <cmath>
#include <stdexcept>

#include "meshdiff/rng.hpp"

namespace meshdiff {

namespace {

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& scores) {
  Eigen::MatrixXd p(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const double m = scores.row(i).maxCoeff();
    p.row(i) = (scores.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

// d score = P .* (dP - rowsum(dP .* P)) per row.
Eigen::MatrixXd softmax_rows_backward(const Eigen::MatrixXd& p,
                                      const Eigen::MatrixXd& dp) {
  Eigen::MatrixXd ds(p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double inner = (dp.row(i).array() * p.row(i).array()).sum();
    ds.row(i) = p.row(i).array() * (dp.row(i).array() - inner);
  }
  return ds;
}

}  // namespace

Eigen::RowVectorXd sinusoidal_step_embedding(int k, int dim) {
  if (dim < 1) throw std::invalid_argument("step embedding: dim must be >= 1");
  Eigen::RowVectorXd e(dim);
  const int pairs = (dim + 1) / 2;
  for (int i = 0; i < pairs; ++i) {
    const double freq =
        std::exp(-std::log(10000.0) * (2.0 * i) / static_cast<double>(dim));
    e[2 * i] = std::sin(k * freq);
    if (2 * i + 1 < dim) e[2 * i + 1] = std::cos(k * freq);
  }
  return e;
}

TokenDenoiser::TokenDenoiser(const TokenDenoiserConfig& config) : config_(config) {
  if (config.vertex_count < 1)
    throw std::invalid_argument("TokenDenoiser: vertex_count must be >= 1");
  if (config.d_id < 1 || config.d_step < 1 || config.d_ctx < 1)
    throw std::invalid_argument("TokenDenoiser: embedding dims must be >= 1");
  const int d = config.token_dim();
  Rng rng(config.init_seed);
  auto init = [&](Eigen::Index r, Eigen::Index c, double scale) -> Eigen::MatrixXd {
    return scale * rng.normal_matrix(r, c);
  };
  id_embed_ = init(config.vertex_count, config.d_id, 0.5);
  self_wq_ = init(d, d, 1.0 / std::sqrt(static_cast<double>(d)));
  self_wk_ = init(d, d, 1.0 / std::sqrt(static_cast<double>(d)));
  self_wv_ = init(d, d, 1.0 / std::sqrt(static_cast<double>(d)));
  cross_wq_ = init(d, d, 1.0 / std::sqrt(static_cast<double>(d)));
  cross_wk_ = init(config.d_ctx, d, 1.0 / std::sqrt(static_cast<double>(config.d_ctx)));
  cross_wv_ = init(config.d_ctx, d, 1.0 / std::sqrt(static_cast<double>(config.d_ctx)));
  out_w_ = init(d, 3, config.init_scale / std::sqrt(static_cast<double>(d)));
  out_b_ = Eigen::MatrixXd::Zero(1, 3);
}

struct TokenDenoiser::Cache {
  Eigen::MatrixXd x0, q, kk, vv, p, x1;      // self-attention
  Eigen::MatrixXd qc, kc, vc, pc, x2;        // cross-attention
  Mat3 out;
};

TokenDenoiser::Cache TokenDenoiser::forward(const MeshSample& hk, int k,
                                            const ContextFeature& ctx) const {
  const int v_count = config_.vertex_count;
  if (hk.vertices.rows() != v_count)
    throw std::invalid_argument("TokenDenoiser: vertex count mismatch");
  if (ctx.tokens.cols() != config_.d_ctx)
    throw std::invalid_argument("TokenDenoiser: context width mismatch");
  if (ctx.tokens.rows() < 1)
    throw std::invalid_argument("TokenDenoiser: empty context");

  const int d = config_.token_dim();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const Eigen::RowVectorXd step_embed = sinusoidal_step_embedding(k, config_.d_step);

  Cache c;
  c.x0.resize(v_count, d);
  for (int v = 0; v < v_count; ++v) {
    c.x0.block(v, 0, 1, config_.d_id) = id_embed_.row(v);
    c.x0.block(v, config_.d_id, 1, config_.d_step) = step_embed;
    c.x0.block(v, config_.d_id + config_.d_step, 1, 3) = hk.vertices.row(v);
  }

  c.q = c.x0 * self_wq_;
  c.kk = c.x0 * self_wk_;
  c.vv = c.x0 * self_wv_;
  c.p = softmax_rows(c.q * c.kk.transpose() * inv_sqrt_d);
  c.x1 = c.x0 + c.p * c.vv;

  c.qc = c.x1 * cross_wq_;
  c.kc = ctx.tokens * cross_wk_;
  c.vc = ctx.tokens * cross_wv_;
  c.pc = softmax_rows(c.qc * c.kc.transpose() * inv_sqrt_d);
  c.x2 = c.x1 + c.pc * c.vc;

  c.out = c.x2 * out_w_;
  c.out.rowwise() += out_b_.row(0);
  return c;
}

Mat3 TokenDenoiser::evaluate(const MeshSample& hk, int k,
                             const ContextFeature& ctx) const {
  return forward(hk, k, ctx).out;
}

std::vector<Eigen::MatrixXd> TokenDenoiser::backward(const MeshSample& hk, int k,
                                                     const ContextFeature& ctx,
                                                     const Mat3& cotangent,
                                                     Mat3* d_input) const {
  const Cache c = forward(hk, k, ctx);
  if (cotangent.rows() != c.out.rows())
    throw std::invalid_argument("TokenDenoiser::backward: cotangent shape mismatch");
  const int d = config_.token_dim();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  Eigen::MatrixXd d_out_w = c.x2.transpose() * cotangent;
  Eigen::MatrixXd d_out_b = cotangent.colwise().sum();
  Eigen::MatrixXd dx2 = cotangent * out_w_.transpose();

  // Cross-attention backward; the context itself carries no gradient.
  Eigen::MatrixXd dx1 = dx2;  // residual branch
  const Eigen::MatrixXd dpc = dx2 * c.vc.transpose();
  const Eigen::MatrixXd d_cross_wv = ctx.tokens.transpose() * (c.pc.transpose() * dx2);
  const Eigen::MatrixXd dsc = softmax_rows_backward(c.pc, dpc);
  const Eigen::MatrixXd dqc = dsc * c.kc * inv_sqrt_d;
  const Eigen::MatrixXd dkc = dsc.transpose() * c.qc * inv_sqrt_d;
  const Eigen::MatrixXd d_cross_wq = c.x1.transpose() * dqc;
  const Eigen::MatrixXd d_cross_wk = ctx.tokens.transpose() * dkc;
  dx1 += dqc * cross_wq_.transpose();

  // Self-attention backward.
  Eigen::MatrixXd dx0 = dx1;  // residual branch
  const Eigen::MatrixXd dp = dx1 * c.vv.transpose();
  const Eigen::MatrixXd dvv = c.p.transpose() * dx1;
  const Eigen::MatrixXd ds = softmax_rows_backward(c.p, dp);
  const Eigen::MatrixXd dq = ds * c.kk * inv_sqrt_d;
  const Eigen::MatrixXd dk = ds.transpose() * c.q * inv_sqrt_d;
  const Eigen::MatrixXd d_self_wq = c.x0.transpose() * dq;
  const Eigen::MatrixXd d_self_wk = c.x0.transpose() * dk;
  const Eigen::MatrixXd d_self_wv = c.x0.transpose() * dvv;
  dx0 += dq * self_wq_.transpose() + dk * self_wk_.transpose() +
         dvv * self_wv_.transpose();

  Eigen::MatrixXd d_id = dx0.leftCols(config_.d_id);
  if (d_input) *d_input = dx0.rightCols(3);

  std::vector<Eigen::MatrixXd> grads;
  grads.reserve(9);
  grads.push_back(std::move(d_id));
  grads.push_back(d_self_wq);
  grads.push_back(d_self_wk);
  grads.push_back(d_self_wv);
  grads.push_back(d_cross_wq);
  grads.push_back(d_cross_wk);
  grads.push_back(d_cross_wv);
  grads.push_back(std::move(d_out_w));
  grads.push_back(std::move(d_out_b));
  return grads;
}

Mat3 TokenDenoiser::vjp(const MeshSample& hk, int k, const ContextFeature& ctx,
                        const Mat3& cotangent) const {
  Mat3 d_input;
  backward(hk, k, ctx, cotangent, &d_input);
  return d_input;
}

std::vector<Eigen::MatrixXd*> TokenDenoiser::parameters() {
  return {&id_embed_, &self_wq_, &self_wk_, &self_wv_, &cross_wq_,
          &cross_wk_, &cross_wv_, &out_w_,  &out_b_};
}

std::vector<const Eigen::MatrixXd*> TokenDenoiser::parameters() const {
  return {&id_embed_, &self_wq_, &self_wk_, &self_wv_, &cross_wq_,
          &cross_wk_, &cross_wv_, &out_w_,  &out_b_};
}

std::vector<std::string> TokenDenoiser::parameter_names() {
  return {"id_embed", "self_wq", "self_wk", "self_wv", "cross_wq",
          "cross_wk", "cross_wv", "out_w",  "out_b"};
}

std::size_t TokenDenoiser::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += static_cast<std::size_t>(p->size());
  return n;
}

}  // namespace meshdiff
