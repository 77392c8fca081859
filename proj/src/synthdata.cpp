// SPDX-License-Identifier: Apache-2.0
#include "meshdiff/synthdata.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <Eigen/Geometry>
#include <json.hpp>

#include "meshdiff/rng.hpp"

namespace meshdiff {

namespace {

struct Bone {
  int parent_joint;
  Eigen::Vector3d rest_dir;  // unit direction in the parent frame
  double length;
};

// Joint 0 is the root at the origin; bone b creates joint b+1.
std::vector<Bone> template_bones(MeshTemplate t) {
  auto dir = [](double x, double y, double z) {
    return Eigen::Vector3d(x, y, z).normalized();
  };
  switch (t) {
    case MeshTemplate::chain: {
      std::vector<Bone> bones;
      for (int i = 0; i < 6; ++i) bones.push_back({i, dir(1, 0, 0), 1.0});
      return bones;
    }
    case MeshTemplate::biped: {
      // 0 pelvis, 1 chest, 2 head, 3 l-knee, 4 l-foot, 5 r-knee, 6 r-foot,
      // 7 l-elbow, 8 l-hand, 9 r-elbow, 10 r-hand.
      return {
          {0, dir(0, 1, 0), 1.0},        // pelvis -> chest
          {1, dir(0, 1, 0), 0.6},        // chest -> head
          {0, dir(-0.3, -1, 0), 1.0},    // pelvis -> l-knee
          {3, dir(0, -1, 0), 0.9},       // l-knee -> l-foot
          {0, dir(0.3, -1, 0), 1.0},     // pelvis -> r-knee
          {5, dir(0, -1, 0), 0.9},       // r-knee -> r-foot
          {1, dir(-1, -0.2, 0), 0.7},    // chest -> l-elbow
          {7, dir(-1, -0.4, 0), 0.6},    // l-elbow -> l-hand
          {1, dir(1, -0.2, 0), 0.7},     // chest -> r-elbow
          {9, dir(1, -0.4, 0), 0.6},     // r-elbow -> r-hand
      };
    }
    case MeshTemplate::hand: {
      // 0 wrist, then (base, tip) per finger.
      std::vector<Bone> bones;
      for (int fingr = 0; fingr < 5; ++fingr) {
        const double spread = (fingr - 2) * 0.28;
        bones.push_back({0, dir(spread, 1, 0), 0.8});
        bones.push_back({1 + 2 * fingr, dir(spread, 1, 0), 0.5});
      }
      return bones;
    }
  }
  throw std::invalid_argument("unknown mesh template");
}

constexpr double kClusterHalfWidth = 0.12;

}  // namespace

std::string template_name(MeshTemplate t) {
  switch (t) {
    case MeshTemplate::chain: return "chain";
    case MeshTemplate::biped: return "biped";
    case MeshTemplate::hand: return "hand";
  }
  throw std::invalid_argument("unknown mesh template");
}

MeshTemplate template_from_name(const std::string& name) {
  if (name == "chain") return MeshTemplate::chain;
  if (name == "biped") return MeshTemplate::biped;
  if (name == "hand") return MeshTemplate::hand;
  throw std::invalid_argument("unknown mesh template '" + name + "'");
}

int pose_param_count(MeshTemplate t) {
  return 2 * static_cast<int>(template_bones(t).size());
}

ProblemInstance generate_instance(MeshTemplate t, const Eigen::VectorXd& pose_params,
                                  double scale, std::uint64_t seed,
                                  const InstanceOptions& options) {
  if (!(scale > 0.0))
    throw std::invalid_argument("generate_instance: scale must be positive");
  const std::vector<Bone> bones = template_bones(t);
  const int num_bones = static_cast<int>(bones.size());
  Eigen::VectorXd params = pose_params;
  if (params.size() == 0) params = Eigen::VectorXd::Zero(2 * num_bones);
  if (params.size() != 2 * num_bones)
    throw std::invalid_argument("generate_instance: expected " +
                                std::to_string(2 * num_bones) +
                                " pose parameters, got " +
                                std::to_string(params.size()));

  // Forward kinematics: each bone rotates in its parent's frame by a bend
  // about z followed by a bend about y.
  const int num_joints = num_bones + 1;
  std::vector<Eigen::Vector3d> joints(num_joints);
  std::vector<Eigen::Matrix3d> frames(num_joints, Eigen::Matrix3d::Identity());
  joints[0].setZero();
  for (int b = 0; b < num_bones; ++b) {
    const double bend_z = params[2 * b];
    const double bend_y = params[2 * b + 1];
    const Eigen::Matrix3d local =
        (Eigen::AngleAxisd(bend_z, Eigen::Vector3d::UnitZ()) *
         Eigen::AngleAxisd(bend_y, Eigen::Vector3d::UnitY()))
            .toRotationMatrix();
    const Eigen::Matrix3d frame = frames[bones[b].parent_joint] * local;
    frames[b + 1] = frame;
    joints[b + 1] = joints[bones[b].parent_joint] +
                    frame * (bones[b].rest_dir * bones[b].length * scale);
  }

  // Two vertices per joint offset along the joint frame's z axis; offsets
  // rotate rigidly with the incoming bone.
  ProblemInstance inst;
  inst.template_id = t;
  inst.pose_params = params;
  inst.scale = scale;
  inst.seed = seed;

  const int v_count = 2 * num_joints;
  inst.gt_mesh.vertices.resize(v_count, 3);
  inst.gt_mesh.step = 0;
  for (int j = 0; j < num_joints; ++j) {
    const Eigen::Vector3d offset =
        frames[j] * Eigen::Vector3d(0, 0, kClusterHalfWidth * scale);
    inst.gt_mesh.vertices.row(2 * j) = (joints[j] + offset).transpose();
    inst.gt_mesh.vertices.row(2 * j + 1) = (joints[j] - offset).transpose();
  }

  inst.topology.vertex_count = v_count;
  auto add_edge = [&](int a, int b) {
    for (const auto& e : inst.topology.edges)
      if ((e[0] == a && e[1] == b) || (e[0] == b && e[1] == a)) return;
    inst.topology.edges.push_back({a, b});
  };
  for (int b = 0; b < num_bones; ++b) {
    const int p = bones[b].parent_joint, c = b + 1;
    const int p1 = 2 * p, p2 = 2 * p + 1, c1 = 2 * c, c2 = 2 * c + 1;
    inst.topology.faces.push_back({p1, p2, c2});
    inst.topology.faces.push_back({p1, c2, c1});
    add_edge(p1, p2);
    add_edge(p2, c2);
    add_edge(c2, p1);
    add_edge(c2, c1);
    add_edge(c1, p1);
  }
  inst.topology.validate();

  inst.pose_map.weights = Eigen::MatrixXd::Zero(num_joints, v_count);
  for (int j = 0; j < num_joints; ++j) {
    inst.pose_map.weights(j, 2 * j) = 0.5;
    inst.pose_map.weights(j, 2 * j + 1) = 0.5;
  }

  // Context: fixed sinusoidal projection of the pose parameters (shared per
  // template so the encoding is learnable) plus instance-seeded noise.
  Rng proj_rng(mix_seed(0x636f6e74657874ull, static_cast<std::uint64_t>(t)));
  Eigen::MatrixXd proj =
      proj_rng.normal_matrix(options.ctx_tokens * options.ctx_dim, params.size());
  Eigen::MatrixXd phase = proj_rng.normal_matrix(options.ctx_tokens, options.ctx_dim);
  Rng noise_rng(mix_seed(seed, 0x636e6f697365ull));
  inst.context.tokens.resize(options.ctx_tokens, options.ctx_dim);
  for (int i = 0; i < options.ctx_tokens; ++i)
    for (int j = 0; j < options.ctx_dim; ++j) {
      const double phase_arg =
          proj.row(i * options.ctx_dim + j).dot(params) + phase(i, j);
      inst.context.tokens(i, j) =
          std::sin(phase_arg) + options.ctx_noise * noise_rng.normal();
    }
  return inst;
}

PriorDistribution generate_prior(const ProblemInstance& instance,
                                 const PriorSpec& spec, std::uint64_t seed) {
  if (spec.num_samples < 1)
    throw std::invalid_argument("generate_prior: num_samples must be >= 1");
  if (spec.joint_noise_sigma < 0.0)
    throw std::invalid_argument("generate_prior: sigma must be >= 0");
  const Mat3 gt_pose = apply_map(instance.pose_map, instance.gt_mesh);
  Mat3 bias = spec.bias;
  if (bias.size() == 0) bias = Mat3::Zero(gt_pose.rows(), 3);
  require_same_shape(bias, gt_pose, "generate_prior bias");

  Rng rng(mix_seed(seed, 0x7072696f72ull));
  PriorDistribution prior;
  prior.noise_level = spec.joint_noise_sigma;
  prior.samples.reserve(spec.num_samples);
  for (int i = 0; i < spec.num_samples; ++i) {
    prior.samples.push_back(gt_pose + bias +
                            spec.joint_noise_sigma *
                                rng.normal_matrix(gt_pose.rows(), 3));
  }
  return prior;
}

Dataset build_dataset(int num_instances, const std::vector<MeshTemplate>& templates,
                      const PoseSamplerSpec& pose_sampler, std::uint64_t seed,
                      double scale, const InstanceOptions& options,
                      double train_fraction) {
  if (num_instances < 1)
    throw std::invalid_argument("build_dataset: num_instances must be >= 1");
  if (templates.empty())
    throw std::invalid_argument("build_dataset: template list is empty");
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0))
    throw std::invalid_argument("build_dataset: train_fraction must be in [0,1]");

  Dataset ds;
  ds.manifest.seed = seed;
  ds.manifest.num_instances = num_instances;
  ds.manifest.templates = templates;
  ds.manifest.scale = scale;
  ds.manifest.pose_sampler = pose_sampler;
  ds.manifest.instance_options = options;
  ds.manifest.train_fraction = train_fraction;

  ds.instances.reserve(num_instances);
  for (int i = 0; i < num_instances; ++i) {
    const MeshTemplate t = templates[i % templates.size()];
    const std::uint64_t inst_seed = mix_seed(seed, static_cast<std::uint64_t>(i));
    Rng pose_rng(mix_seed(inst_seed, 0x706f7365ull));
    Eigen::VectorXd params(pose_param_count(t));
    for (Eigen::Index p = 0; p < params.size(); ++p)
      params[p] = pose_sampler.max_angle * (2.0 * pose_rng.uniform() - 1.0);
    ds.instances.push_back(generate_instance(t, params, scale, inst_seed, options));
  }

  // Deterministic shuffled split.
  std::vector<int> order(num_instances);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(mix_seed(seed, 0x73706c6974ull));
  for (int i = num_instances - 1; i > 0; --i) {
    const int j = static_cast<int>(split_rng.uniform_int(0, i));
    std::swap(order[i], order[j]);
  }
  const int train_count = static_cast<int>(
      std::llround(train_fraction * static_cast<double>(num_instances)));
  ds.manifest.train_indices.assign(order.begin(), order.begin() + train_count);
  ds.manifest.test_indices.assign(order.begin() + train_count, order.end());
  return ds;
}

Dataset dataset_from_manifest(const DatasetManifest& m) {
  Dataset ds = build_dataset(m.num_instances, m.templates, m.pose_sampler, m.seed,
                             m.scale, m.instance_options, m.train_fraction);
  if (ds.manifest.train_indices != m.train_indices ||
      ds.manifest.test_indices != m.test_indices)
    throw std::runtime_error(
        "dataset_from_manifest: stored split does not match regeneration");
  return ds;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["seed"] = m.seed;
  j["num_instances"] = m.num_instances;
  std::vector<std::string> names;
  for (auto t : m.templates) names.push_back(template_name(t));
  j["templates"] = names;
  j["scale"] = m.scale;
  j["pose_sampler"] = {{"max_angle", m.pose_sampler.max_angle}};
  j["instance_options"] = {{"ctx_tokens", m.instance_options.ctx_tokens},
                           {"ctx_dim", m.instance_options.ctx_dim},
                           {"ctx_noise", m.instance_options.ctx_noise}};
  j["train_fraction"] = m.train_fraction;
  j["train_indices"] = m.train_indices;
  j["test_indices"] = m.test_indices;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_manifest: cannot open " + path.string());
  out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_manifest: cannot open " + path.string());
  nlohmann::json j;
  in >> j;
  DatasetManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.num_instances = j.at("num_instances").get<int>();
  for (const auto& name : j.at("templates"))
    m.templates.push_back(template_from_name(name.get<std::string>()));
  m.scale = j.at("scale").get<double>();
  m.pose_sampler.max_angle = j.at("pose_sampler").at("max_angle").get<double>();
  m.instance_options.ctx_tokens = j.at("instance_options").at("ctx_tokens").get<int>();
  m.instance_options.ctx_dim = j.at("instance_options").at("ctx_dim").get<int>();
  m.instance_options.ctx_noise =
      j.at("instance_options").at("ctx_noise").get<double>();
  m.train_fraction = j.at("train_fraction").get<double>();
  m.train_indices = j.at("train_indices").get<std::vector<int>>();
  m.test_indices = j.at("test_indices").get<std::vector<int>>();
  return m;
}

}  // namespace meshdiff
