// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "meshdiff/geometry.hpp"
#include "meshdiff/guidance.hpp"
#include "meshdiff/mesh.hpp"
#include "meshdiff/models.hpp"

namespace meshdiff {

enum class MeshTemplate { chain, biped, hand };

std::string template_name(MeshTemplate t);
MeshTemplate template_from_name(const std::string& name);

// Number of pose parameters the template's forward kinematics consumes
// (two bend angles per bone).
int pose_param_count(MeshTemplate t);

struct InstanceOptions {
  int ctx_tokens = 8;
  int ctx_dim = 16;
  double ctx_noise = 0.05;
};

// One synthetic problem: a posed low-poly articulated mesh, its fixed
// topology, the joint regressor, and a conditioning feature derived from the
// pose parameters.
struct ProblemInstance {
  MeshTemplate template_id = MeshTemplate::chain;
  MeshTopology topology;
  MeshSample gt_mesh;  // step 0
  MeshToPoseMap pose_map;
  ContextFeature context;
  Eigen::VectorXd pose_params;
  double scale = 1.0;
  std::uint64_t seed = 0;
};

// Deterministic in (template, pose_params, scale, seed): the mesh comes from
// forward kinematics over the template's bone tree, the context feature from
// a fixed sinusoidal encoding of the pose parameters plus seeded noise.
ProblemInstance generate_instance(MeshTemplate t, const Eigen::VectorXd& pose_params,
                                  double scale, std::uint64_t seed,
                                  const InstanceOptions& options = {});

struct PriorSpec {
  double joint_noise_sigma = 0.1;
  Mat3 bias;  // J x 3; empty means zero
  int num_samples = 25;
};

// u_i = f(gt_mesh) + bias + sigma * z_i with independent standard normals.
PriorDistribution generate_prior(const ProblemInstance& instance,
                                 const PriorSpec& spec, std::uint64_t seed);

// Named pose sampler so a manifest can reproduce the dataset exactly.
struct PoseSamplerSpec {
  double max_angle = 0.6;  // radians; each parameter uniform in [-max, max]
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  int num_instances = 0;
  std::vector<MeshTemplate> templates;
  double scale = 1.0;
  PoseSamplerSpec pose_sampler;
  InstanceOptions instance_options;
  double train_fraction = 0.8;
  std::vector<int> train_indices;
  std::vector<int> test_indices;
};

struct Dataset {
  std::vector<ProblemInstance> instances;
  DatasetManifest manifest;
};

Dataset build_dataset(int num_instances, const std::vector<MeshTemplate>& templates,
                      const PoseSamplerSpec& pose_sampler, std::uint64_t seed,
                      double scale = 1.0, const InstanceOptions& options = {},
                      double train_fraction = 0.8);

// Regenerates the identical dataset recorded by a manifest.
Dataset dataset_from_manifest(const DatasetManifest& manifest);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

}  // namespace meshdiff
