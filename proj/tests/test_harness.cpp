// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "meshdiff/geometry.hpp"
#include "meshdiff/harness.hpp"
#include "meshdiff/serialize.hpp"

using namespace meshdiff;

namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "cannot open ", p.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "meshdiff_harness" / name;
  fs::remove_all(dir);
  return dir;
}

// Small, fast configuration shared by the command tests.
RunConfig tiny_config(const std::string& name) {
  RunConfig c;
  c.output_dir = fresh_dir(name).string();
  c.dataset.num_instances = 8;
  c.dataset.templates = {MeshTemplate::chain};
  c.guidance.num_chains = 3;
  c.guidance.normalize_by_n = true;
  c.schedule.ddim_steps = 10;
  c.train.updates = 25;
  c.train.batch_size = 8;
  c.train.learning_rate = 1e-3;
  c.ablate.num_trials = 4;
  return c;
}

}  // namespace

TEST_CASE("config validation reports every problem at once") {
  RunConfig c;
  c.schedule.K = 0;
  c.schedule.ddim_steps = 0;
  c.guidance.r = 1.5;
  c.dataset.num_instances = 0;
  c.train.batch_size = 0;
  c.output_dir = "";
  const auto problems = validate_config(c);
  CHECK(problems.size() >= 6);
  try {
    require_valid(c);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.problems().size() == problems.size());
  }
}

TEST_CASE("default config is valid and keeps the reference operating point") {
  RunConfig c;
  CHECK(validate_config(c).empty());
  CHECK(c.schedule.K == 200);
  CHECK(c.schedule.ddim_steps == 40);
  CHECK(c.guidance.r == 0.05);
  CHECK(c.guidance.gamma == 0.2);
  CHECK(c.guidance.num_chains == 25);
  CHECK(c.train.learning_rate == 1e-4);
}

TEST_CASE("config JSON round trip is byte-stable") {
  RunConfig c = tiny_config("json_roundtrip");
  c.guidance.gamma = 0.37;
  c.model.target_mode = DiffusionTarget::step_difference;
  c.guidance.gradient_mode = GradientMode::stop_gradient;
  const std::string a = config_to_json(c);
  const RunConfig parsed = config_from_json(a);
  CHECK(config_to_json(parsed) == a);
  CHECK(parsed.guidance.gradient_mode == GradientMode::stop_gradient);
  CHECK(parsed.model.target_mode == DiffusionTarget::step_difference);
}

TEST_CASE("gen-data writes a manifest that regenerates the dataset") {
  RunConfig c = tiny_config("gen_data");
  const auto manifest_path = cmd_gen_data(c);
  CHECK(fs::exists(manifest_path));
  CHECK(fs::exists(fs::path(c.output_dir) / "config.json"));

  const DatasetManifest manifest = load_manifest(manifest_path);
  const Dataset rebuilt = dataset_from_manifest(manifest);
  CHECK(rebuilt.instances.size() == 8);

  MeshDumpHeader header;
  const auto meshes = read_mesh_dump(fs::path(c.output_dir) / "meshes.bin", &header);
  REQUIRE(meshes.size() == 8);
  CHECK(header.vertex_count == rebuilt.instances.front().gt_mesh.vertex_count());
  CHECK(header.joint_count == rebuilt.instances.front().pose_map.joint_count());
  for (std::size_t i = 0; i < meshes.size(); ++i)
    CHECK((meshes[i] - rebuilt.instances[i].gt_mesh.vertices).norm() == 0.0);
}

TEST_CASE("train command is reproducible and its checkpoint loads") {
  RunConfig c = tiny_config("train_a");
  const TrainOutputs a = cmd_train(c);
  CHECK(fs::exists(a.checkpoint));
  const std::string curve_a = slurp(a.loss_curve_csv);

  c.output_dir = fresh_dir("train_b").string();
  const TrainOutputs b = cmd_train(c);
  CHECK(slurp(b.loss_curve_csv) == curve_a);

  DiffusionTarget target;
  std::uint64_t seed;
  const TokenDenoiser model = load_checkpoint(a.checkpoint, &target, &seed);
  CHECK(target == DiffusionTarget::epsilon);
  CHECK(seed == c.seeds.train);
  CHECK(model.config().vertex_count == 14);  // chain template
}

TEST_CASE("sample command writes the full artifact set deterministically") {
  RunConfig c = tiny_config("sample_a");
  const SampleOutputs a = cmd_sample(c);
  CHECK(fs::exists(a.trace_csv));
  CHECK(fs::exists(a.metrics_csv));
  CHECK(fs::exists(a.metrics_json));
  CHECK(fs::exists(a.samples_bin));
  CHECK(a.report.pa_mpjpe <= a.report.mpjpe + 1e-12);

  const std::string trace_a = slurp(a.trace_csv);
  CHECK(trace_a.substr(0, trace_a.find('\n')) == "chain,k,D_k,R_k,act");

  c.output_dir = fresh_dir("sample_b").string();
  const SampleOutputs b = cmd_sample(c);
  CHECK(slurp(b.trace_csv) == trace_a);
  CHECK(slurp(b.metrics_csv) == slurp(a.metrics_csv));

  MeshDumpHeader header;
  const auto samples = read_mesh_dump(a.samples_bin, &header);
  CHECK(samples.size() == 3);
  CHECK(header.total_steps == c.schedule.K);
}

TEST_CASE("gamma=0 sampling reproduces the unguided baseline bytes") {
  RunConfig c = tiny_config("gamma0_dat");
  c.guidance.gamma = 0.0;
  c.sample.variant = "dat";
  const SampleOutputs dat = cmd_sample(c);

  RunConfig plain = c;
  plain.output_dir = fresh_dir("gamma0_std").string();
  plain.sample.variant = "standard";
  const SampleOutputs std_out = cmd_sample(plain);

  CHECK(slurp(dat.metrics_csv) == slurp(std_out.metrics_csv));
  CHECK(slurp(dat.samples_bin) == slurp(std_out.samples_bin));
}

TEST_CASE("sampling from a checkpoint detects architecture mismatches") {
  RunConfig c = tiny_config("ckpt_train");
  const TrainOutputs trained = cmd_train(c);

  RunConfig s = tiny_config("ckpt_sample");
  s.sample.use_analytic_model = false;
  s.sample.checkpoint = trained.checkpoint.string();
  const SampleOutputs out = cmd_sample(s);
  CHECK(out.report.mpve >= 0.0);

  RunConfig bad = tiny_config("ckpt_mismatch");
  bad.dataset.templates = {MeshTemplate::biped};  // 22 vertices vs 14
  bad.sample.use_analytic_model = false;
  bad.sample.checkpoint = trained.checkpoint.string();
  CHECK_THROWS_WITH_AS(cmd_sample(bad), doctest::Contains("mismatch"),
                       std::runtime_error);
}

TEST_CASE("single-variant ablation produces a one-row table") {
  RunConfig c = tiny_config("ablate_single");
  c.ablate.variants = {"dat"};
  const AblationOutputs out = cmd_ablate(c);
  REQUIRE(out.rows.size() == 1);
  CHECK(out.rows[0].variant == "dat");
  const std::string table = slurp(out.table_csv);
  CHECK(table.find("variant,mean_mpve") == 0);
  CHECK(std::count(table.begin(), table.end(), '\n') == 2);  // header + one row
}

TEST_CASE("rerunning any command from its emitted config is byte-identical") {
  RunConfig c = tiny_config("emit_a");
  c.ablate.variants = {"standard", "dat"};
  const AblationOutputs first = cmd_ablate(c);
  const std::string table_first = slurp(first.table_csv);

  RunConfig reloaded = load_config(fs::path(c.output_dir) / "config.json");
  reloaded.output_dir = fresh_dir("emit_b").string();
  const AblationOutputs second = cmd_ablate(reloaded);
  CHECK(slurp(second.table_csv) == table_first);
  CHECK(slurp(fs::path(c.output_dir) / "schedule.txt") ==
        slurp(fs::path(reloaded.output_dir) / "schedule.txt"));
}

TEST_CASE("nested missing output directories are created") {
  RunConfig c = tiny_config("nested");
  c.output_dir = (fresh_dir("nested") / "deep" / "er").string();
  cmd_gen_data(c);
  CHECK(fs::exists(fs::path(c.output_dir) / "manifest.json"));
}

TEST_CASE("unknown ablation variants are rejected during validation") {
  RunConfig c = tiny_config("bad_variant");
  c.ablate.variants = {"dat", "mystery"};
  CHECK_THROWS_AS(cmd_ablate(c), ConfigError);
}

TEST_CASE("analytic-model sampling lands on the closed-form Gaussian center") {
  // Unguided sampling with the analytic model fitted to the dataset: the
  // ensemble aggregate estimates the fitted mean, so its MPVE against the
  // ground truth must match the closed-form value mpve(fitted mean, gt)
  // within the Monte-Carlo tolerance 4 sqrt(mean variance / chains).
  RunConfig c = tiny_config("gaussian_oracle");
  c.sample.variant = "standard";
  c.guidance.num_chains = 16;
  const SampleOutputs out = cmd_sample(c);

  // Independent re-fit of the analytic target by plain loops.
  const Dataset ds = build_dataset(c.dataset.num_instances, c.dataset.templates,
                                   c.dataset.pose_sampler, c.seeds.dataset,
                                   c.dataset.scale, c.dataset.instance_options,
                                   c.dataset.train_fraction);
  const auto& train_idx = ds.manifest.train_indices;
  const Eigen::Index verts = ds.instances.front().gt_mesh.vertex_count();
  Mat3 mean = Mat3::Zero(verts, 3);
  for (int i : train_idx) mean += ds.instances[i].gt_mesh.vertices;
  mean /= static_cast<double>(train_idx.size());
  Mat3 var = Mat3::Constant(verts, 3, c.sample.analytic_variance_floor);
  for (int i : train_idx) {
    const Mat3 d = ds.instances[i].gt_mesh.vertices - mean;
    var += d.cwiseProduct(d) / static_cast<double>(train_idx.size());
  }
  const int which = c.sample.instance_index %
                    static_cast<int>(ds.manifest.test_indices.size());
  const ProblemInstance& inst = ds.instances[ds.manifest.test_indices[which]];

  const double expected = mpve(mean, inst.gt_mesh.vertices);
  const double tolerance =
      4.0 * std::sqrt(var.mean() / static_cast<double>(c.guidance.num_chains));
  CHECK(std::abs(out.report.mpve - expected) < tolerance);
}

TEST_CASE("corrupted checkpoints are rejected") {
  const auto dir = fresh_dir("bad_ckpt");
  fs::create_directories(dir);
  const auto path = dir / "checkpoint.bin";
  std::ofstream(path) << "not a checkpoint\n";
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
}

TEST_CASE("per-step trace dumps cover every chain and visited step") {
  RunConfig c = tiny_config("trace_dump");
  c.sample.dump_trace_samples = true;
  cmd_sample(c);
  MeshDumpHeader header;
  const auto states =
      read_mesh_dump(fs::path(c.output_dir) / "trace_states.bin", &header);
  const auto estimates =
      read_mesh_dump(fs::path(c.output_dir) / "trace_estimates.bin", &header);
  CHECK(states.size() ==
        static_cast<std::size_t>(c.guidance.num_chains * c.schedule.ddim_steps));
  CHECK(estimates.size() == states.size());
  CHECK(header.vertex_count == 14);  // chain template
}
