// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "meshdiff/denoiser.hpp"
#include "meshdiff/diffusion.hpp"
#include "meshdiff/guidance.hpp"
#include "meshdiff/rng.hpp"
#include "meshdiff/synthdata.hpp"
#include "oracle_helpers.hpp"

using namespace meshdiff;

namespace {

struct Setup {
  NoiseSchedule sched;
  ProblemInstance inst;
  PriorDistribution prior;
  TokenDenoiser model;
  AnalyticGaussianScore analytic;

  static Setup make(int ddim_steps = 20, double prior_sigma = 0.1,
                    std::uint64_t seed = 1) {
    NoiseSchedule sched = build_schedule(100, 0.9999, 1e-4, 0.0, ddim_steps);
    ProblemInstance inst = generate_instance(MeshTemplate::chain, {}, 1.0, seed);
    PriorSpec spec;
    spec.joint_noise_sigma = prior_sigma;
    spec.num_samples = 5;
    PriorDistribution prior = generate_prior(inst, spec, seed + 1);
    TokenDenoiserConfig cfg;
    cfg.vertex_count = static_cast<int>(inst.gt_mesh.vertex_count());
    cfg.init_seed = seed + 2;
    TokenDenoiser model(cfg);
    const Mat3 var = Mat3::Constant(inst.gt_mesh.vertex_count(), 3, 0.4);
    AnalyticGaussianScore analytic(inst.gt_mesh.vertices, var, sched);
    return {std::move(sched), std::move(inst), std::move(prior), std::move(model),
            std::move(analytic)};
  }
};

MeshSample noise_state(const Setup& s, std::uint64_t seed) {
  Rng rng(seed);
  MeshSample hK;
  hK.vertices = rng.normal_matrix(s.inst.gt_mesh.vertex_count(), 3);
  hK.step = s.sched.K;
  return hK;
}

}  // namespace

TEST_CASE("gap is zero when the prior matches the pose exactly") {
  const Setup s = Setup::make();
  PriorDistribution exact;
  exact.samples = {apply_map(s.inst.pose_map, s.inst.gt_mesh)};
  CHECK(gap(s.inst.gt_mesh, exact, s.inst.pose_map) == 0.0);
}

TEST_CASE("gap of symmetric samples is twice the squared offset") {
  const Setup s = Setup::make();
  Rng rng(7);
  const Mat3 pose = apply_map(s.inst.pose_map, s.inst.gt_mesh);
  const Mat3 d = rng.normal_matrix(pose.rows(), 3);
  PriorDistribution sym;
  sym.samples = {pose + d, pose - d};
  CHECK(gap(s.inst.gt_mesh, sym, s.inst.pose_map) ==
        doctest::Approx(2.0 * d.squaredNorm()).epsilon(1e-12));
}

TEST_CASE("gap equals the elementwise loop oracle") {
  const Setup s = Setup::make();
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    MeshSample estimate;
    estimate.vertices = rng.normal_matrix(s.inst.gt_mesh.vertex_count(), 3);
    estimate.step = 0;
    std::vector<Mat3> samples;
    for (int i = 0; i < 4; ++i)
      samples.push_back(rng.normal_matrix(s.inst.pose_map.joint_count(), 3));
    PriorDistribution prior;
    prior.samples = samples;
    CHECK(oracle::rel_err(
              gap(estimate, prior, s.inst.pose_map),
              oracle::loop_gap(estimate.vertices, samples, s.inst.pose_map.weights)) <
          1e-12);
  }
}

TEST_CASE("gap is invariant under permuting the prior samples") {
  const Setup s = Setup::make();
  Rng rng(9);
  MeshSample estimate;
  estimate.vertices = rng.normal_matrix(s.inst.gt_mesh.vertex_count(), 3);
  estimate.step = 0;
  PriorDistribution prior = s.prior;
  const double base = gap(estimate, prior, s.inst.pose_map);
  std::mt19937 shuffler(4);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(prior.samples.begin(), prior.samples.end(), shuffler);
    CHECK(gap(estimate, prior, s.inst.pose_map) ==
          doctest::Approx(base).epsilon(1e-14));
  }
}

TEST_CASE("gap rejects mismatched joints and non-clean estimates") {
  const Setup s = Setup::make();
  MeshSample tagged = s.inst.gt_mesh;
  tagged.step = 3;
  CHECK_THROWS_AS(gap(tagged, s.prior, s.inst.pose_map), std::invalid_argument);
  PriorDistribution bad;
  bad.samples = {Mat3::Zero(2, 3)};
  CHECK_THROWS_AS(gap(s.inst.gt_mesh, bad, s.inst.pose_map), std::invalid_argument);
}

TEST_CASE("alignment gradient vanishes when every prior sample is matched") {
  const Setup s = Setup::make();
  PriorDistribution exact;
  const int k = 50;
  MeshSample at_k = noise_state(s, 11);
  at_k.step = k;
  const Mat3 eps = s.analytic.evaluate(at_k, k, s.inst.context);
  const MeshSample h0_hat = estimate_h0(at_k, eps, k, s.sched);
  exact.samples = {apply_map(s.inst.pose_map, h0_hat),
                   apply_map(s.inst.pose_map, h0_hat)};
  const Mat3 g = alignment_gradient(at_k, k, s.analytic, s.inst.context, exact,
                                    s.inst.pose_map, s.sched, GradientMode::full);
  CHECK(g.norm() < 1e-10);
}

TEST_CASE("stop-gradient mode matches its closed form on a 2-vertex instance") {
  // Hand-built problem: 2 vertices, 1 joint averaging them.
  NoiseSchedule sched = build_schedule(50, 0.9999, 1e-4, 0.0, 10);
  MeshToPoseMap f;
  f.weights = Eigen::MatrixXd::Constant(1, 2, 0.5);
  Rng rng(12);
  PriorDistribution prior;
  prior.samples = {rng.normal_matrix(1, 3), rng.normal_matrix(1, 3),
                   rng.normal_matrix(1, 3)};
  Mat3 mu = rng.normal_matrix(2, 3);
  AnalyticGaussianScore model(mu, Mat3::Constant(2, 3, 0.7), sched);
  const ContextFeature ctx{Eigen::MatrixXd::Zero(1, 1)};

  const int k = 23;
  MeshSample hk;
  hk.vertices = rng.normal_matrix(2, 3);
  hk.step = k;
  const Mat3 grad = alignment_gradient(hk, k, model, ctx, prior, f, sched,
                                       GradientMode::stop_gradient);

  // Independent evaluation: (1/sqrt(a)) f^T sum_i 2 (f(h0_hat) - u_i), all by
  // scalar loops.
  const double a = sched.alphas[k];
  const Mat3 eps = model.evaluate(hk, k, ctx);
  Mat3 h0_hat(2, 3);
  for (int i = 0; i < 2; ++i)
    for (int c = 0; c < 3; ++c)
      h0_hat(i, c) = (hk.vertices(i, c) - std::sqrt(1.0 - a) * eps(i, c)) /
                     std::sqrt(a);
  double pose[3];
  for (int c = 0; c < 3; ++c) pose[c] = 0.5 * h0_hat(0, c) + 0.5 * h0_hat(1, c);
  Mat3 expected(2, 3);
  for (int i = 0; i < 2; ++i)
    for (int c = 0; c < 3; ++c) {
      double sum = 0.0;
      for (const auto& u : prior.samples) sum += 2.0 * (pose[c] - u(0, c));
      expected(i, c) = 0.5 * sum / std::sqrt(a);
    }
  CHECK(oracle::rel_err(grad, expected) < 1e-10);
}

TEST_CASE("full-mode gradient matches central finite differences of D_k") {
  const Setup s = Setup::make();
  Rng rng(13);
  for (int k : {7, 41, 92}) {
    MeshSample hk;
    hk.vertices = rng.normal_matrix(s.inst.gt_mesh.vertex_count(), 3);
    hk.step = k;
    const Mat3 grad = alignment_gradient(hk, k, s.model, s.inst.context, s.prior,
                                         s.inst.pose_map, s.sched,
                                         GradientMode::full);
    const auto d_of = [&](const Mat3& v) {
      MeshSample probe;
      probe.vertices = v;
      probe.step = k;
      const Mat3 eps = s.model.evaluate(probe, k, s.inst.context);
      return gap(estimate_h0(probe, eps, k, s.sched), s.prior, s.inst.pose_map);
    };
    const Mat3 numeric = oracle::finite_difference_gradient(d_of, hk.vertices, 1e-5);
    CHECK(oracle::rel_err(grad, numeric) < 1e-4);
  }
}

TEST_CASE("a single guided update decreases the gap to first order") {
  const Setup s = Setup::make();
  Rng rng(14);
  const int k = 60;
  MeshSample hk;
  hk.vertices = rng.normal_matrix(s.inst.gt_mesh.vertex_count(), 3);
  hk.step = k;
  const Mat3 g = alignment_gradient(hk, k, s.analytic, s.inst.context, s.prior,
                                    s.inst.pose_map, s.sched, GradientMode::full);
  const auto d_of = [&](double gamma) {
    MeshSample moved;
    moved.vertices = hk.vertices - gamma * g;
    moved.step = k;
    const Mat3 eps = s.analytic.evaluate(moved, k, s.inst.context);
    return gap(estimate_h0(moved, eps, k, s.sched), s.prior, s.inst.pose_map);
  };
  const double step = 1e-6;
  const double derivative = (d_of(step) - d_of(-step)) / (2.0 * step);
  CHECK(derivative < 0.0);
  // The directional derivative along -g is -||g||^2.
  CHECK(oracle::rel_err(derivative, -g.squaredNorm()) < 1e-5);
}

TEST_CASE("dat trace invariants: R starts at 1, act latches once") {
  const Setup s = Setup::make(20, 0.3, 5);
  GuidanceConfig cfg;
  cfg.normalize_by_n = true;
  const ChainResult res = dat_reverse_process(
      noise_state(s, 20), s.analytic, s.inst.context, s.prior, s.inst.pose_map,
      s.sched, cfg, 21);
  REQUIRE(!res.trace.rows.empty());
  CHECK(res.trace.rows.front().relative_gap == 1.0);
  bool seen_off = false;
  for (const auto& row : res.trace.rows) {
    if (!row.act) seen_off = true;
    if (seen_off) CHECK_FALSE(row.act);
    CHECK(row.gap >= 0.0);
    CHECK(row.relative_gap >= 0.0);
  }
  CHECK(res.final.step == 0);
  CHECK(res.final.vertices.allFinite());
}

TEST_CASE("gamma = 0 reproduces the unguided chain exactly") {
  const Setup s = Setup::make();
  GuidanceConfig cfg;
  cfg.gamma = 0.0;
  const MeshSample hK = noise_state(s, 22);
  const ChainResult guided = run_chain(hK, s.analytic, s.inst.context, s.prior,
                                       s.inst.pose_map, s.sched, cfg,
                                       ChainVariant::dat, 23);
  const ChainResult plain = run_chain(hK, s.analytic, s.inst.context, s.prior,
                                      s.inst.pose_map, s.sched, cfg,
                                      ChainVariant::unguided, 23);
  for (Eigen::Index i = 0; i < guided.final.vertices.rows(); ++i)
    for (int c = 0; c < 3; ++c)
      CHECK(guided.final.vertices(i, c) == plain.final.vertices(i, c));
}

TEST_CASE("threshold edge: r slightly above 1 never fires guidance") {
  const Setup s = Setup::make();
  GuidanceConfig cfg;
  cfg.gamma = 0.5;
  cfg.normalize_by_n = true;
  const MeshSample hK = noise_state(s, 24);

  cfg.r = 1.0 + 1e-9;
  const ChainResult off = run_chain(hK, s.analytic, s.inst.context, s.prior,
                                    s.inst.pose_map, s.sched, cfg,
                                    ChainVariant::dat, 25);
  for (const auto& row : off.trace.rows) CHECK_FALSE(row.act);
  const ChainResult plain = run_chain(hK, s.analytic, s.inst.context, s.prior,
                                      s.inst.pose_map, s.sched, cfg,
                                      ChainVariant::unguided, 25);
  for (Eigen::Index i = 0; i < off.final.vertices.rows(); ++i)
    for (int c = 0; c < 3; ++c)
      CHECK(off.final.vertices(i, c) == plain.final.vertices(i, c));

  // With r = 1 exactly, R_K = 1 >= r fires guidance at the first step.
  cfg.r = 1.0;
  const ChainResult once = run_chain(hK, s.analytic, s.inst.context, s.prior,
                                     s.inst.pose_map, s.sched, cfg,
                                     ChainVariant::dat, 25);
  CHECK(once.trace.rows.front().act);
}

TEST_CASE("non-finite guidance gradients abort with the step index") {
  struct NanVjpModel : ScoreModel {
    Mat3 evaluate(const MeshSample& hk, int, const ContextFeature&) const override {
      return Mat3::Zero(hk.vertices.rows(), 3);
    }
    Mat3 vjp(const MeshSample& hk, int, const ContextFeature&,
             const Mat3&) const override {
      return Mat3::Constant(hk.vertices.rows(), 3,
                            std::numeric_limits<double>::quiet_NaN());
    }
  };
  const Setup s = Setup::make();
  NanVjpModel model;
  GuidanceConfig cfg;
  CHECK_THROWS_WITH_AS(
      run_chain(noise_state(s, 26), model, s.inst.context, s.prior, s.inst.pose_map,
                s.sched, cfg, ChainVariant::dat, 27),
      doctest::Contains("k="), std::runtime_error);
}

TEST_CASE("run_ensemble is deterministic and reduces to one chain at N=1") {
  const Setup s = Setup::make();
  GuidanceConfig cfg;
  cfg.normalize_by_n = true;
  cfg.num_chains = 1;
  const EnsembleResult single =
      run_ensemble(s.inst.gt_mesh.vertex_count(), s.analytic, s.inst.context,
                   s.prior, s.inst.pose_map, s.sched, cfg, ChainVariant::dat, 31);
  REQUIRE(single.samples.size() == 1);
  CHECK(single.failures.empty());

  // The single chain equals dat_reverse_process with the derived seeds.
  Rng init(mix_seed(31, 0));
  MeshSample hK;
  hK.vertices = init.normal_matrix(s.inst.gt_mesh.vertex_count(), 3);
  hK.step = s.sched.K;
  const ChainResult direct = dat_reverse_process(
      hK, s.analytic, s.inst.context, s.prior, s.inst.pose_map, s.sched, cfg,
      mix_seed(31, 1));
  CHECK(oracle::rel_err(single.samples[0].vertices, direct.final.vertices) == 0.0);

  cfg.num_chains = 6;
  const EnsembleResult a =
      run_ensemble(s.inst.gt_mesh.vertex_count(), s.analytic, s.inst.context,
                   s.prior, s.inst.pose_map, s.sched, cfg, ChainVariant::dat, 32);
  const EnsembleResult b =
      run_ensemble(s.inst.gt_mesh.vertex_count(), s.analytic, s.inst.context,
                   s.prior, s.inst.pose_map, s.sched, cfg, ChainVariant::dat, 32);
  REQUIRE(a.samples.size() == 6);
  for (int c = 0; c < 6; ++c)
    for (Eigen::Index i = 0; i < a.samples[c].vertices.rows(); ++i)
      for (int j = 0; j < 3; ++j)
        CHECK(a.samples[c].vertices(i, j) == b.samples[c].vertices(i, j));
}

TEST_CASE("failed chains are reported by index while others complete") {
  struct NanVjpModel : ScoreModel {
    Mat3 evaluate(const MeshSample& hk, int, const ContextFeature&) const override {
      return Mat3::Zero(hk.vertices.rows(), 3);
    }
    Mat3 vjp(const MeshSample& hk, int, const ContextFeature&,
             const Mat3&) const override {
      return Mat3::Constant(hk.vertices.rows(), 3,
                            std::numeric_limits<double>::quiet_NaN());
    }
  };
  const Setup s = Setup::make();
  NanVjpModel model;
  GuidanceConfig cfg;
  cfg.num_chains = 3;
  const EnsembleResult res =
      run_ensemble(s.inst.gt_mesh.vertex_count(), model, s.inst.context, s.prior,
                   s.inst.pose_map, s.sched, cfg, ChainVariant::dat, 33);
  CHECK(res.samples.empty());
  REQUIRE(res.failures.size() == 3);
  CHECK(res.failures[0].first == 0);
  CHECK(res.failures[2].first == 2);
}

TEST_CASE("guided runs close the gap better than unguided over seeded trials") {
  // Reduced version of the paired benchmark comparison; the acceptance suite
  // runs the full 50-trial configuration.
  const Setup s = Setup::make(20, 0.1, 40);
  GuidanceConfig cfg;
  cfg.normalize_by_n = true;
  cfg.num_chains = 4;
  double dat_total = 0.0, plain_total = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::uint64_t seed = mix_seed(100, trial);
    for (auto variant : {ChainVariant::dat, ChainVariant::unguided}) {
      const EnsembleResult res =
          run_ensemble(s.inst.gt_mesh.vertex_count(), s.analytic, s.inst.context,
                       s.prior, s.inst.pose_map, s.sched, cfg, variant, seed);
      REQUIRE(res.failures.empty());
      double g = 0.0;
      for (const auto& sample : res.samples)
        g += gap(sample, s.prior, s.inst.pose_map);
      (variant == ChainVariant::dat ? dat_total : plain_total) += g;
    }
  }
  CHECK(dat_total < plain_total);
}

TEST_CASE("eta=0 guided chain is a deterministic function of h_K") {
  const Setup s = Setup::make();
  GuidanceConfig cfg;
  cfg.normalize_by_n = true;
  const MeshSample hK = noise_state(s, 40);
  const ChainResult a = dat_reverse_process(hK, s.analytic, s.inst.context, s.prior,
                                            s.inst.pose_map, s.sched, cfg, 41);
  const ChainResult b = dat_reverse_process(hK, s.analytic, s.inst.context, s.prior,
                                            s.inst.pose_map, s.sched, cfg, 999);
  for (Eigen::Index i = 0; i < a.final.vertices.rows(); ++i)
    for (int c = 0; c < 3; ++c)
      CHECK(a.final.vertices(i, c) == b.final.vertices(i, c));
}
