// SPDX-License-Identifier: Apache-2.0
#include "meshdiff/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "meshdiff/diffusion.hpp"
#include "meshdiff/rng.hpp"
#include "meshdiff/serialize.hpp"

namespace meshdiff {

namespace {

std::string join(const std::vector<std::string>& parts, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

const char* gradient_mode_name(GradientMode m) {
  return m == GradientMode::full ? "full" : "stop_gradient";
}

GradientMode gradient_mode_from_name(const std::string& name) {
  if (name == "full") return GradientMode::full;
  if (name == "stop_gradient") return GradientMode::stop_gradient;
  throw std::runtime_error("unknown gradient_mode '" + name + "'");
}

const char* target_mode_name(DiffusionTarget t) {
  return t == DiffusionTarget::epsilon ? "epsilon" : "step_difference";
}

DiffusionTarget target_mode_from_name(const std::string& name) {
  if (name == "epsilon") return DiffusionTarget::epsilon;
  if (name == "step_difference") return DiffusionTarget::step_difference;
  throw std::runtime_error("unknown target_mode '" + name + "'");
}

bool known_variant(const std::string& name) {
  return name == "standard" || name == "disrupted" || name == "dat" ||
         name == "dat_no_activation" || name == "single_pose_prior";
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error("invalid config: " + join(problems, "; ")),
      problems_(std::move(problems)) {}

std::vector<std::string> validate_config(const RunConfig& c) {
  std::vector<std::string> p;
  auto bad = [&](const std::string& msg) { p.push_back(msg); };

  if (c.schedule.K < 1) bad("schedule.K must be >= 1");
  if (!(c.schedule.alpha_last < c.schedule.alpha_first))
    bad("schedule.alpha_last must be < alpha_first");
  if (!(c.schedule.alpha_last > 0.0 && c.schedule.alpha_first <= 1.0))
    bad("schedule alpha endpoints must lie in (0, 1]");
  if (c.schedule.alpha_last > 1e-3)
    bad("schedule.alpha_last must be <= 1e-3 so the terminal state is noise");
  if (c.schedule.eta < 0.0 || c.schedule.eta > 1.0)
    bad("schedule.eta must lie in [0, 1]");
  if (c.schedule.ddim_steps < 1 || c.schedule.ddim_steps > c.schedule.K)
    bad("schedule.ddim_steps must lie in [1, K]");

  if (!(c.guidance.r > 0.0 && c.guidance.r < 1.0))
    bad("guidance.r must lie in (0, 1)");
  if (!std::isfinite(c.guidance.gamma) || c.guidance.gamma < 0.0)
    bad("guidance.gamma must be finite and >= 0");
  if (c.guidance.num_chains < 1) bad("guidance.num_chains must be >= 1");

  if (c.model.d_id < 1 || c.model.d_step < 1 || c.model.d_ctx < 1)
    bad("model embedding widths must be >= 1");
  if (!(c.model.init_scale > 0.0)) bad("model.init_scale must be positive");

  if (c.dataset.num_instances < 1) bad("dataset.num_instances must be >= 1");
  if (c.dataset.templates.empty()) bad("dataset.templates must be non-empty");
  if (!(c.dataset.scale > 0.0)) bad("dataset.scale must be positive");
  if (!(c.dataset.pose_sampler.max_angle >= 0.0))
    bad("dataset.max_pose_angle must be >= 0");
  if (c.dataset.instance_options.ctx_tokens < 1 ||
      c.dataset.instance_options.ctx_dim < 1)
    bad("dataset context dimensions must be >= 1");
  if (c.dataset.instance_options.ctx_dim != c.model.d_ctx)
    bad("dataset.ctx_dim must equal model.d_ctx");
  if (!(c.dataset.train_fraction >= 0.0 && c.dataset.train_fraction <= 1.0))
    bad("dataset.train_fraction must lie in [0, 1]");
  if (c.dataset.prior_sigma < 0.0) bad("dataset.prior_sigma must be >= 0");
  if (c.dataset.prior_samples < 1) bad("dataset.prior_samples must be >= 1");

  auto check_weight = [&](double w, const char* name) {
    if (!(w >= 0.0) || !std::isfinite(w))
      bad(std::string("loss_weights.") + name + " must be finite and >= 0");
  };
  check_weight(c.loss_weights.lambda_v, "lambda_v");
  check_weight(c.loss_weights.lambda_j, "lambda_j");
  check_weight(c.loss_weights.lambda_n, "lambda_n");
  check_weight(c.loss_weights.lambda_e, "lambda_e");

  if (c.train.updates < 1) bad("train.updates must be >= 1");
  if (c.train.batch_size < 1) bad("train.batch_size must be >= 1");
  if (!(c.train.learning_rate >= 0.0)) bad("train.learning_rate must be >= 0");

  if (!c.sample.use_analytic_model && c.sample.checkpoint.empty())
    bad("sample needs a checkpoint when use_analytic_model is false");
  if (c.sample.instance_index < 0) bad("sample.instance_index must be >= 0");
  if (!known_variant(c.sample.variant))
    bad("sample.variant '" + c.sample.variant + "' is not a known variant");
  if (!(c.sample.f_small_threshold > 0.0) || !(c.sample.f_large_threshold > 0.0))
    bad("sample f-score thresholds must be positive");
  if (!(c.sample.analytic_variance_floor > 0.0))
    bad("sample.analytic_variance_floor must be positive");

  if (c.ablate.variants.empty()) bad("ablate.variants must be non-empty");
  for (const auto& v : c.ablate.variants)
    if (!known_variant(v)) bad("ablate variant '" + v + "' is not known");
  if (c.ablate.num_trials < 1) bad("ablate.num_trials must be >= 1");

  if (c.output_dir.empty()) bad("output_dir must be non-empty");
  return p;
}

void require_valid(const RunConfig& config) {
  auto problems = validate_config(config);
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

std::string config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["schedule"] = {{"K", c.schedule.K},
                   {"alpha_first", c.schedule.alpha_first},
                   {"alpha_last", c.schedule.alpha_last},
                   {"eta", c.schedule.eta},
                   {"ddim_steps", c.schedule.ddim_steps}};
  j["guidance"] = {{"r", c.guidance.r},
                   {"gamma", c.guidance.gamma},
                   {"gradient_mode", gradient_mode_name(c.guidance.gradient_mode)},
                   {"num_chains", c.guidance.num_chains},
                   {"normalize_by_n", c.guidance.normalize_by_n}};
  j["model"] = {{"d_id", c.model.d_id},
                {"d_step", c.model.d_step},
                {"d_ctx", c.model.d_ctx},
                {"init_scale", c.model.init_scale},
                {"init_seed", c.model.init_seed},
                {"target_mode", target_mode_name(c.model.target_mode)}};
  std::vector<std::string> names;
  for (auto t : c.dataset.templates) names.push_back(template_name(t));
  j["dataset"] = {{"num_instances", c.dataset.num_instances},
                  {"templates", names},
                  {"scale", c.dataset.scale},
                  {"max_pose_angle", c.dataset.pose_sampler.max_angle},
                  {"ctx_tokens", c.dataset.instance_options.ctx_tokens},
                  {"ctx_dim", c.dataset.instance_options.ctx_dim},
                  {"ctx_noise", c.dataset.instance_options.ctx_noise},
                  {"train_fraction", c.dataset.train_fraction},
                  {"prior_sigma", c.dataset.prior_sigma},
                  {"prior_bias", c.dataset.prior_bias},
                  {"prior_samples", c.dataset.prior_samples}};
  j["loss_weights"] = {{"lambda_v", c.loss_weights.lambda_v},
                       {"lambda_j", c.loss_weights.lambda_j},
                       {"lambda_n", c.loss_weights.lambda_n},
                       {"lambda_e", c.loss_weights.lambda_e}};
  j["train"] = {{"updates", c.train.updates},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate}};
  j["sample"] = {{"use_analytic_model", c.sample.use_analytic_model},
                 {"analytic_variance_floor", c.sample.analytic_variance_floor},
                 {"checkpoint", c.sample.checkpoint},
                 {"instance_index", c.sample.instance_index},
                 {"variant", c.sample.variant},
                 {"f_small_threshold", c.sample.f_small_threshold},
                 {"f_large_threshold", c.sample.f_large_threshold},
                 {"dump_trace_samples", c.sample.dump_trace_samples}};
  j["ablate"] = {{"variants", c.ablate.variants},
                 {"num_trials", c.ablate.num_trials}};
  j["seeds"] = {{"dataset", c.seeds.dataset},
                {"train", c.seeds.train},
                {"sample", c.seeds.sample},
                {"prior", c.seeds.prior}};
  j["output_dir"] = c.output_dir;
  return j.dump(2) + "\n";
}

RunConfig config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  RunConfig c;
  const auto& s = j.at("schedule");
  c.schedule.K = s.at("K").get<int>();
  c.schedule.alpha_first = s.at("alpha_first").get<double>();
  c.schedule.alpha_last = s.at("alpha_last").get<double>();
  c.schedule.eta = s.at("eta").get<double>();
  c.schedule.ddim_steps = s.at("ddim_steps").get<int>();

  const auto& g = j.at("guidance");
  c.guidance.r = g.at("r").get<double>();
  c.guidance.gamma = g.at("gamma").get<double>();
  c.guidance.gradient_mode =
      gradient_mode_from_name(g.at("gradient_mode").get<std::string>());
  c.guidance.num_chains = g.at("num_chains").get<int>();
  c.guidance.normalize_by_n = g.at("normalize_by_n").get<bool>();

  const auto& m = j.at("model");
  c.model.d_id = m.at("d_id").get<int>();
  c.model.d_step = m.at("d_step").get<int>();
  c.model.d_ctx = m.at("d_ctx").get<int>();
  c.model.init_scale = m.at("init_scale").get<double>();
  c.model.init_seed = m.at("init_seed").get<std::uint64_t>();
  c.model.target_mode = target_mode_from_name(m.at("target_mode").get<std::string>());

  const auto& d = j.at("dataset");
  c.dataset.num_instances = d.at("num_instances").get<int>();
  c.dataset.templates.clear();
  for (const auto& name : d.at("templates"))
    c.dataset.templates.push_back(template_from_name(name.get<std::string>()));
  c.dataset.scale = d.at("scale").get<double>();
  c.dataset.pose_sampler.max_angle = d.at("max_pose_angle").get<double>();
  c.dataset.instance_options.ctx_tokens = d.at("ctx_tokens").get<int>();
  c.dataset.instance_options.ctx_dim = d.at("ctx_dim").get<int>();
  c.dataset.instance_options.ctx_noise = d.at("ctx_noise").get<double>();
  c.dataset.train_fraction = d.at("train_fraction").get<double>();
  c.dataset.prior_sigma = d.at("prior_sigma").get<double>();
  c.dataset.prior_bias = d.at("prior_bias").get<double>();
  c.dataset.prior_samples = d.at("prior_samples").get<int>();

  const auto& w = j.at("loss_weights");
  c.loss_weights.lambda_v = w.at("lambda_v").get<double>();
  c.loss_weights.lambda_j = w.at("lambda_j").get<double>();
  c.loss_weights.lambda_n = w.at("lambda_n").get<double>();
  c.loss_weights.lambda_e = w.at("lambda_e").get<double>();

  const auto& t = j.at("train");
  c.train.updates = t.at("updates").get<int>();
  c.train.batch_size = t.at("batch_size").get<int>();
  c.train.learning_rate = t.at("learning_rate").get<double>();

  const auto& sp = j.at("sample");
  c.sample.use_analytic_model = sp.at("use_analytic_model").get<bool>();
  c.sample.analytic_variance_floor = sp.at("analytic_variance_floor").get<double>();
  c.sample.checkpoint = sp.at("checkpoint").get<std::string>();
  c.sample.instance_index = sp.at("instance_index").get<int>();
  c.sample.variant = sp.at("variant").get<std::string>();
  c.sample.f_small_threshold = sp.at("f_small_threshold").get<double>();
  c.sample.f_large_threshold = sp.at("f_large_threshold").get<double>();
  c.sample.dump_trace_samples = sp.at("dump_trace_samples").get<bool>();

  const auto& a = j.at("ablate");
  c.ablate.variants = a.at("variants").get<std::vector<std::string>>();
  c.ablate.num_trials = a.at("num_trials").get<int>();

  const auto& se = j.at("seeds");
  c.seeds.dataset = se.at("dataset").get<std::uint64_t>();
  c.seeds.train = se.at("train").get<std::uint64_t>();
  c.seeds.sample = se.at("sample").get<std::uint64_t>();
  c.seeds.prior = se.at("prior").get<std::uint64_t>();

  c.output_dir = j.at("output_dir").get<std::string>();
  return c;
}

void save_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_config: cannot open " + path.string());
  out << config_to_json(config);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_config: cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str());
}

ChainVariant chain_variant_from_name(const std::string& name) {
  if (name == "standard") return ChainVariant::unguided;
  if (name == "disrupted") return ChainVariant::disrupted;
  if (name == "dat" || name == "single_pose_prior") return ChainVariant::dat;
  if (name == "dat_no_activation") return ChainVariant::dat_no_activation;
  throw std::runtime_error("unknown variant '" + name + "'");
}

namespace {

std::filesystem::path prepare_output_dir(const RunConfig& config) {
  const std::filesystem::path dir(config.output_dir);
  std::filesystem::create_directories(dir);
  save_config(config, dir / "config.json");
  return dir;
}

NoiseSchedule schedule_from(const RunConfig& c) {
  return build_schedule(c.schedule.K, c.schedule.alpha_first, c.schedule.alpha_last,
                        c.schedule.eta, c.schedule.ddim_steps);
}

Dataset dataset_from(const RunConfig& c) {
  return build_dataset(c.dataset.num_instances, c.dataset.templates,
                       c.dataset.pose_sampler, c.seeds.dataset, c.dataset.scale,
                       c.dataset.instance_options, c.dataset.train_fraction);
}

PriorSpec prior_spec_from(const RunConfig& c, Eigen::Index joints) {
  PriorSpec spec;
  spec.joint_noise_sigma = c.dataset.prior_sigma;
  spec.num_samples = c.dataset.prior_samples;
  spec.bias = Mat3::Constant(joints, 3, c.dataset.prior_bias);
  return spec;
}

// Analytic stand-in for a trained denoiser: a Gaussian fitted to the
// training split's ground-truth meshes.
std::unique_ptr<AnalyticGaussianScore> fit_analytic_model(
    const Dataset& ds, const NoiseSchedule& sched, double variance_floor) {
  const auto& idx =
      ds.manifest.train_indices.empty() ? ds.manifest.test_indices
                                        : ds.manifest.train_indices;
  if (idx.empty()) throw std::runtime_error("analytic model: empty dataset split");
  const Eigen::Index v_count = ds.instances.front().gt_mesh.vertex_count();
  Mat3 mean = Mat3::Zero(v_count, 3);
  for (int i : idx) mean += ds.instances[i].gt_mesh.vertices;
  mean /= static_cast<double>(idx.size());
  Mat3 var = Mat3::Constant(v_count, 3, variance_floor);
  for (int i : idx) {
    const Mat3 d = ds.instances[i].gt_mesh.vertices - mean;
    var += (d.array() * d.array()).matrix() / static_cast<double>(idx.size());
  }
  return std::make_unique<AnalyticGaussianScore>(mean, var, sched);
}

struct ModelHandle {
  std::unique_ptr<ScoreModel> owned;
  const ScoreModel* model = nullptr;
};

ModelHandle resolve_model(const RunConfig& c, const Dataset& ds,
                          const NoiseSchedule& sched) {
  ModelHandle h;
  if (c.sample.use_analytic_model) {
    h.owned = fit_analytic_model(ds, sched, c.sample.analytic_variance_floor);
  } else {
    auto model = std::make_unique<TokenDenoiser>(load_checkpoint(c.sample.checkpoint));
    if (model->config().vertex_count != ds.instances.front().gt_mesh.vertex_count())
      throw std::runtime_error(
          "checkpoint/architecture mismatch: checkpoint expects " +
          std::to_string(model->config().vertex_count) + " vertices, dataset has " +
          std::to_string(ds.instances.front().gt_mesh.vertex_count()));
    if (model->config().d_ctx != c.dataset.instance_options.ctx_dim)
      throw std::runtime_error("checkpoint/architecture mismatch: context width");
    h.owned = std::move(model);
  }
  h.model = h.owned.get();
  return h;
}

PriorDistribution collapse_to_single_pose(const PriorDistribution& prior) {
  Mat3 mean = Mat3::Zero(prior.samples.front().rows(), 3);
  for (const auto& u : prior.samples) mean += u;
  mean /= static_cast<double>(prior.samples.size());
  PriorDistribution single;
  single.samples.push_back(std::move(mean));
  single.noise_level = prior.noise_level;
  return single;
}

double steps_until_threshold(const DiffusionTrace& trace, double r) {
  for (std::size_t i = 0; i < trace.rows.size(); ++i)
    if (trace.rows[i].relative_gap < r) return static_cast<double>(i);
  return static_cast<double>(trace.rows.size());
}

}  // namespace

TrainOutputs cmd_train(const RunConfig& config) {
  require_valid(config);
  const auto dir = prepare_output_dir(config);
  const NoiseSchedule sched = schedule_from(config);
  save_schedule(sched, dir / "schedule.txt");
  const Dataset ds = dataset_from(config);

  std::vector<ProblemInstance> train_split;
  for (int i : ds.manifest.train_indices) train_split.push_back(ds.instances[i]);
  if (train_split.empty())
    throw std::runtime_error("cmd_train: training split is empty");

  TokenDenoiserConfig mc;
  mc.vertex_count = static_cast<int>(train_split.front().gt_mesh.vertex_count());
  mc.d_id = config.model.d_id;
  mc.d_step = config.model.d_step;
  mc.d_ctx = config.model.d_ctx;
  mc.init_scale = config.model.init_scale;
  mc.init_seed = config.model.init_seed;
  TokenDenoiser model(mc);

  TrainConfig tc;
  tc.updates = config.train.updates;
  tc.batch_size = config.train.batch_size;
  tc.adam.learning_rate = config.train.learning_rate;
  tc.target = config.model.target_mode;
  tc.seed = config.seeds.train;
  const auto curve = train(model, train_split, sched, config.loss_weights, tc);

  TrainOutputs out;
  out.checkpoint = dir / "checkpoint.bin";
  out.loss_curve_csv = dir / "loss_curve.csv";
  save_checkpoint(model, config.model.target_mode, config.seeds.train, out.checkpoint);
  write_loss_curve_csv(curve, out.loss_curve_csv);
  return out;
}

SampleOutputs cmd_sample(const RunConfig& config) {
  require_valid(config);
  const auto dir = prepare_output_dir(config);
  const NoiseSchedule sched = schedule_from(config);
  save_schedule(sched, dir / "schedule.txt");
  const Dataset ds = dataset_from(config);
  if (ds.manifest.test_indices.empty())
    throw std::runtime_error("cmd_sample: test split is empty");
  const int which = config.sample.instance_index %
                    static_cast<int>(ds.manifest.test_indices.size());
  const ProblemInstance& inst = ds.instances[ds.manifest.test_indices[which]];

  const ModelHandle model = resolve_model(config, ds, sched);
  PriorDistribution prior = generate_prior(
      inst, prior_spec_from(config, inst.pose_map.joint_count()),
      mix_seed(config.seeds.prior, static_cast<std::uint64_t>(which)));
  if (config.sample.variant == "single_pose_prior")
    prior = collapse_to_single_pose(prior);

  const EnsembleResult ens = run_ensemble(
      inst.gt_mesh.vertex_count(), *model.model, inst.context, prior, inst.pose_map,
      sched, config.guidance, chain_variant_from_name(config.sample.variant),
      config.seeds.sample);
  if (!ens.failures.empty()) {
    std::vector<std::string> msgs;
    for (const auto& [idx, msg] : ens.failures)
      msgs.push_back("chain " + std::to_string(idx) + ": " + msg);
    throw std::runtime_error("cmd_sample: " + join(msgs, "; "));
  }

  const MeshSample aggregate = aggregate_prediction(ens.samples);

  SampleOutputs out;
  out.report = evaluate_metrics(aggregate.vertices, inst.gt_mesh.vertices,
                                inst.pose_map, config.sample.f_small_threshold,
                                config.sample.f_large_threshold);
  out.trace_csv = dir / "trace.csv";
  out.metrics_csv = dir / "metrics.csv";
  out.metrics_json = dir / "metrics.json";
  out.samples_bin = dir / "samples.bin";
  write_trace_csv(ens.traces, out.trace_csv);
  write_metric_csv(out.report, out.metrics_csv);
  write_metric_json(out.report, out.metrics_json);

  MeshDumpHeader header;
  header.vertex_count = inst.gt_mesh.vertex_count();
  header.joint_count = inst.pose_map.joint_count();
  header.total_steps = sched.K;
  std::vector<Mat3> records;
  for (const auto& s : ens.samples) records.push_back(s.vertices);
  write_mesh_dump(records, header, out.samples_bin);
  write_mesh_dump({aggregate.vertices}, header, dir / "aggregate.bin");

  if (config.sample.dump_trace_samples) {
    std::vector<Mat3> states, estimates;
    for (const auto& trace : ens.traces)
      for (const auto& row : trace.rows) {
        states.push_back(row.h_k);
        estimates.push_back(row.h0_hat);
      }
    write_mesh_dump(states, header, dir / "trace_states.bin");
    write_mesh_dump(estimates, header, dir / "trace_estimates.bin");
  }
  return out;
}

AblationOutputs cmd_ablate(const RunConfig& config) {
  require_valid(config);
  const auto dir = prepare_output_dir(config);
  const NoiseSchedule sched = schedule_from(config);
  save_schedule(sched, dir / "schedule.txt");
  const Dataset ds = dataset_from(config);
  if (ds.manifest.test_indices.empty())
    throw std::runtime_error("cmd_ablate: test split is empty");
  const ModelHandle model = resolve_model(config, ds, sched);

  struct Accumulator {
    double mpve = 0, mpjpe = 0, pa_mpjpe = 0, final_gap = 0, steps_thr = 0;
    long chains = 0;
    int trials = 0;
  };
  std::vector<Accumulator> acc(config.ablate.variants.size());

  for (int trial = 0; trial < config.ablate.num_trials; ++trial) {
    const int which = trial % static_cast<int>(ds.manifest.test_indices.size());
    const ProblemInstance& inst = ds.instances[ds.manifest.test_indices[which]];
    const PriorDistribution prior = generate_prior(
        inst, prior_spec_from(config, inst.pose_map.joint_count()),
        mix_seed(config.seeds.prior, static_cast<std::uint64_t>(trial)));
    // Shared base seed pairs the noise streams across variants.
    const std::uint64_t base_seed =
        mix_seed(config.seeds.sample, static_cast<std::uint64_t>(trial));

    for (std::size_t v = 0; v < config.ablate.variants.size(); ++v) {
      const std::string& name = config.ablate.variants[v];
      PriorDistribution owned;  // keeps a collapsed prior alive when needed
      const PriorDistribution* prior_ptr = &prior;
      if (name == "single_pose_prior") {
        owned = collapse_to_single_pose(prior);
        prior_ptr = &owned;
      }

      const EnsembleResult ens = run_ensemble(
          inst.gt_mesh.vertex_count(), *model.model, inst.context, *prior_ptr,
          inst.pose_map, sched, config.guidance, chain_variant_from_name(name),
          base_seed);
      if (!ens.failures.empty())
        throw std::runtime_error("cmd_ablate: variant " + name + " trial " +
                                 std::to_string(trial) + " failed: " +
                                 ens.failures.front().second);

      const MeshSample aggregate = aggregate_prediction(ens.samples);
      const Mat3 pred_pose = apply_map(inst.pose_map, aggregate);
      const Mat3 gt_pose = apply_map(inst.pose_map, inst.gt_mesh);
      acc[v].mpve += mpve(aggregate.vertices, inst.gt_mesh.vertices);
      acc[v].mpjpe += mpjpe(pred_pose, gt_pose);
      acc[v].pa_mpjpe += pa_mpjpe(pred_pose, gt_pose);
      acc[v].trials += 1;
      for (std::size_t ci = 0; ci < ens.samples.size(); ++ci) {
        // Gap against the prior the chain actually used.
        acc[v].final_gap += gap(ens.samples[ci], *prior_ptr, inst.pose_map);
        acc[v].steps_thr += steps_until_threshold(ens.traces[ci], config.guidance.r);
        acc[v].chains += 1;
      }
    }
  }

  AblationOutputs out;
  out.rows.resize(config.ablate.variants.size());
  for (std::size_t v = 0; v < config.ablate.variants.size(); ++v) {
    auto& row = out.rows[v];
    auto& a = acc[v];
    row.variant = config.ablate.variants[v];
    row.mean_mpve = a.mpve / a.trials;
    row.mean_mpjpe = a.mpjpe / a.trials;
    row.mean_pa_mpjpe = a.pa_mpjpe / a.trials;
    row.mean_final_gap = a.final_gap / static_cast<double>(a.chains);
    row.mean_steps_to_threshold = a.steps_thr / static_cast<double>(a.chains);
  }

  out.table_csv = dir / "ablation.csv";
  std::ofstream csv(out.table_csv);
  if (!csv) throw std::runtime_error("cmd_ablate: cannot open ablation.csv");
  csv << "variant,mean_mpve,mean_mpjpe,mean_pa_mpjpe,mean_final_gap,"
         "mean_steps_to_threshold\n";
  for (const auto& row : out.rows)
    csv << row.variant << ',' << format_double(row.mean_mpve) << ','
        << format_double(row.mean_mpjpe) << ',' << format_double(row.mean_pa_mpjpe)
        << ',' << format_double(row.mean_final_gap) << ','
        << format_double(row.mean_steps_to_threshold) << "\n";
  return out;
}

std::filesystem::path cmd_gen_data(const RunConfig& config) {
  require_valid(config);
  const auto dir = prepare_output_dir(config);
  const Dataset ds = dataset_from(config);
  save_manifest(ds.manifest, dir / "manifest.json");

  MeshDumpHeader header;
  header.vertex_count = ds.instances.front().gt_mesh.vertex_count();
  header.joint_count = ds.instances.front().pose_map.joint_count();
  header.total_steps = config.schedule.K;
  std::vector<Mat3> meshes, poses;
  for (const auto& inst : ds.instances) {
    meshes.push_back(inst.gt_mesh.vertices);
    poses.push_back(apply_map(inst.pose_map, inst.gt_mesh));
  }
  write_mesh_dump(meshes, header, dir / "meshes.bin");
  MeshDumpHeader pose_header = header;
  write_mesh_dump(poses, pose_header, dir / "poses.bin");
  return dir / "manifest.json";
}

}  // namespace meshdiff
