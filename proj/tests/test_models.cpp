// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "meshdiff/denoiser.hpp"
#include "meshdiff/diffusion.hpp"
#include "meshdiff/models.hpp"
#include "meshdiff/rng.hpp"
#include "oracle_helpers.hpp"

using namespace meshdiff;

namespace {

ContextFeature random_context(Rng& rng, int tokens = 4, int dim = 16) {
  return ContextFeature{rng.normal_matrix(tokens, dim)};
}

// <cot, J d> via central differences of evaluate along direction d.
double fd_directional(const ScoreModel& model, const MeshSample& hk, int k,
                      const ContextFeature& ctx, const Mat3& direction,
                      const Mat3& cotangent, double step = 1e-6) {
  MeshSample hi = hk, lo = hk;
  hi.vertices += step * direction;
  lo.vertices -= step * direction;
  const Mat3 diff =
      (model.evaluate(hi, k, ctx) - model.evaluate(lo, k, ctx)) / (2.0 * step);
  return (diff.array() * cotangent.array()).sum();
}

void check_vjp_against_fd(const ScoreModel& model, Eigen::Index v, int k,
                          const ContextFeature& ctx, Rng& rng) {
  for (int probe = 0; probe < 10; ++probe) {
    MeshSample hk;
    hk.vertices = rng.normal_matrix(v, 3);
    hk.step = k;
    const Mat3 cot = rng.normal_matrix(v, 3);
    const Mat3 dir = rng.normal_matrix(v, 3);
    const Mat3 pullback = model.vjp(hk, k, ctx, cot);
    const double analytic = (pullback.array() * dir.array()).sum();
    const double numeric = fd_directional(model, hk, k, ctx, dir, cot);
    CHECK(oracle::rel_err(analytic, numeric) < 1e-4);
  }
}

}  // namespace

TEST_CASE("analytic score: evaluate matches the closed-form epsilon") {
  const NoiseSchedule s = build_schedule(100, 0.9999, 1e-4, 0.0, 100);
  Rng rng(1);
  const Mat3 mu = rng.normal_matrix(2, 3);
  const Mat3 var = (rng.normal_matrix(2, 3).array().abs() + 0.4).matrix();
  const AnalyticGaussianScore model(mu, var, s);
  const ContextFeature ctx{Eigen::MatrixXd::Zero(1, 1)};

  for (int k : {1, 50, 100}) {
    MeshSample hk;
    hk.vertices = rng.normal_matrix(2, 3);
    hk.step = k;
    const Mat3 eps = model.evaluate(hk, k, ctx);
    const double a = s.alphas[k];
    for (Eigen::Index i = 0; i < 2; ++i)
      for (int c = 0; c < 3; ++c) {
        const double denom = a * var(i, c) + (1.0 - a);
        const double expected = std::sqrt(1.0 - a) *
                                (hk.vertices(i, c) - std::sqrt(a) * mu(i, c)) / denom;
        CHECK(eps(i, c) == doctest::Approx(expected).epsilon(1e-13));
      }
  }
}

TEST_CASE("analytic score vjp agrees with finite differences") {
  const NoiseSchedule s = build_schedule(80, 0.9999, 1e-4, 0.0, 80);
  Rng rng(2);
  const Mat3 mu = rng.normal_matrix(3, 3);
  const Mat3 var = (rng.normal_matrix(3, 3).array().abs() + 0.3).matrix();
  const AnalyticGaussianScore model(mu, var, s);
  const ContextFeature ctx{Eigen::MatrixXd::Zero(1, 1)};
  check_vjp_against_fd(model, 3, 37, ctx, rng);
}

TEST_CASE("analytic score rejects invalid construction") {
  const NoiseSchedule s = build_schedule(10, 0.9999, 1e-4, 0.0, 10);
  Rng rng(3);
  CHECK_THROWS_AS(
      AnalyticGaussianScore(rng.normal_matrix(2, 3), Mat3::Zero(2, 3), s),
      std::invalid_argument);
}

TEST_CASE("token denoiser evaluates deterministically with the right shape") {
  TokenDenoiserConfig cfg;
  cfg.vertex_count = 6;
  TokenDenoiser model(cfg);
  CHECK(model.parameter_count() > 0);

  Rng rng(4);
  const ContextFeature ctx = random_context(rng);
  MeshSample hk;
  hk.vertices = rng.normal_matrix(6, 3);
  hk.step = 9;
  const Mat3 a = model.evaluate(hk, 9, ctx);
  const Mat3 b = model.evaluate(hk, 9, ctx);
  CHECK(a.rows() == 6);
  CHECK(a.allFinite());
  for (Eigen::Index i = 0; i < 6; ++i)
    for (int c = 0; c < 3; ++c) CHECK(a(i, c) == b(i, c));
}

TEST_CASE("token width equals d_id + d_step + 3 at paper and toy scales") {
  TokenDenoiserConfig toy;
  CHECK(toy.token_dim() == 34);
  TokenDenoiserConfig paper;
  paper.d_id = 64;
  paper.d_step = 61;
  CHECK(paper.token_dim() == 128);
}

TEST_CASE("step embedding handles odd widths") {
  const auto e = sinusoidal_step_embedding(17, 15);
  CHECK(e.size() == 15);
  CHECK(e.allFinite());
  CHECK(e[0] == doctest::Approx(std::sin(17.0)));
  CHECK(e[1] == doctest::Approx(std::cos(17.0)));
  const auto e2 = sinusoidal_step_embedding(18, 15);
  CHECK((e - e2).norm() > 0.0);
}

TEST_CASE("token denoiser vjp agrees with finite differences") {
  TokenDenoiserConfig cfg;
  cfg.vertex_count = 5;
  cfg.init_seed = 7;
  TokenDenoiser model(cfg);
  Rng rng(5);
  const ContextFeature ctx = random_context(rng);
  check_vjp_against_fd(model, 5, 23, ctx, rng);
}

TEST_CASE("permuting vertex IDs with their embedding rows permutes the output") {
  TokenDenoiserConfig cfg;
  cfg.vertex_count = 7;
  cfg.init_seed = 11;
  TokenDenoiser model(cfg);
  Rng rng(6);
  const ContextFeature ctx = random_context(rng);
  MeshSample hk;
  hk.vertices = rng.normal_matrix(7, 3);
  hk.step = 14;
  const Mat3 base = model.evaluate(hk, 14, ctx);

  std::vector<int> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  std::rotate(perm.begin(), perm.begin() + 3, perm.end());

  TokenDenoiser permuted(cfg);
  // Copy weights, permuting only the ID embedding rows.
  auto src = model.parameters();
  auto dst = permuted.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = *src[i];
  for (int v = 0; v < 7; ++v) dst[0]->row(v) = src[0]->row(perm[v]);

  MeshSample hk_perm;
  hk_perm.vertices.resize(7, 3);
  for (int v = 0; v < 7; ++v) hk_perm.vertices.row(v) = hk.vertices.row(perm[v]);
  hk_perm.step = 14;

  const Mat3 out_perm = permuted.evaluate(hk_perm, 14, ctx);
  for (int v = 0; v < 7; ++v)
    CHECK((out_perm.row(v) - base.row(perm[v])).norm() < 1e-12);
}

TEST_CASE("a model without a vjp fails full-mode differentiation") {
  struct NoVjpModel : ScoreModel {
    Mat3 evaluate(const MeshSample& hk, int, const ContextFeature&) const override {
      return Mat3::Zero(hk.vertices.rows(), 3);
    }
    Mat3 vjp(const MeshSample&, int, const ContextFeature&,
             const Mat3&) const override {
      throw std::logic_error("model lacks a vector-Jacobian product");
    }
  };
  NoVjpModel model;
  MeshSample hk;
  hk.vertices = Mat3::Zero(2, 3);
  hk.step = 1;
  const ContextFeature ctx{Eigen::MatrixXd::Zero(1, 1)};
  CHECK_THROWS_AS(model.vjp(hk, 1, ctx, Mat3::Zero(2, 3)), std::logic_error);
}

TEST_CASE("aggregate_prediction trivial cases") {
  Rng rng(7);
  MeshSample a;
  a.vertices = rng.normal_matrix(4, 3);
  a.step = 0;
  const MeshSample single = aggregate_prediction({a});
  CHECK(oracle::rel_err(single.vertices, a.vertices) == 0.0);

  const Mat3 mu = rng.normal_matrix(4, 3);
  const Mat3 d = rng.normal_matrix(4, 3);
  MeshSample hi, lo;
  hi.vertices = mu + d;
  lo.vertices = mu - d;
  hi.step = lo.step = 0;
  const MeshSample mid = aggregate_prediction({hi, lo});
  CHECK(oracle::rel_err(mid.vertices, mu) < 1e-14);

  CHECK_THROWS_AS(aggregate_prediction({}), std::invalid_argument);
}

TEST_CASE("aggregate_prediction applies an optional refinement head") {
  Rng rng(8);
  MeshSample a;
  a.vertices = rng.normal_matrix(3, 3);
  a.step = 0;
  const RefinementHead head = [](const Mat3& m) { return Mat3(2.0 * m); };
  const MeshSample out = aggregate_prediction({a}, &head);
  CHECK(oracle::rel_err(out.vertices, Mat3(2.0 * a.vertices)) == 0.0);
}

TEST_CASE("ensemble mean never scores worse than the average sample (Jensen)") {
  Rng rng(9);
  const Mat3 gt = rng.normal_matrix(5, 3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<MeshSample> samples;
    double mean_mpve = 0.0;
    for (int i = 0; i < 8; ++i) {
      MeshSample s;
      s.vertices = gt + 0.5 * rng.normal_matrix(5, 3);
      s.step = 0;
      mean_mpve += mpve(s.vertices, gt);
      samples.push_back(std::move(s));
    }
    mean_mpve /= 8.0;
    const MeshSample agg = aggregate_prediction(samples);
    CHECK(mpve(agg.vertices, gt) <= mean_mpve + 1e-12);
  }
}
