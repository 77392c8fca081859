// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "meshdiff/guidance.hpp"
#include "meshdiff/losses.hpp"
#include "meshdiff/synthdata.hpp"
#include "meshdiff/train.hpp"

namespace meshdiff {

struct ScheduleParams {
  int K = 200;
  double alpha_first = 0.9999;
  double alpha_last = 1e-4;
  double eta = 0.0;
  int ddim_steps = 40;
};

struct ModelParams {
  int d_id = 16;
  int d_step = 15;
  int d_ctx = 16;
  double init_scale = 0.1;
  std::uint64_t init_seed = 1;
  DiffusionTarget target_mode = DiffusionTarget::epsilon;
};

struct DatasetParams {
  int num_instances = 100;
  std::vector<MeshTemplate> templates = {MeshTemplate::biped};
  double scale = 1.0;
  PoseSamplerSpec pose_sampler;
  InstanceOptions instance_options;
  double train_fraction = 0.8;
  double prior_sigma = 0.1;
  double prior_bias = 0.0;  // added uniformly to every joint coordinate
  int prior_samples = 25;
};

struct TrainParams {
  int updates = 2000;
  int batch_size = 16;
  double learning_rate = 1e-4;
};

struct SampleParams {
  bool use_analytic_model = true;
  // Variance floor for the analytic model fitted to the dataset.
  double analytic_variance_floor = 0.05;
  std::string checkpoint;
  int instance_index = 0;  // index into the test split
  std::string variant = "dat";
  double f_small_threshold = 0.1;
  double f_large_threshold = 0.3;
  // Also dump the per-step h_k and h0_hat snapshots of every chain in the
  // flat binary layout.
  bool dump_trace_samples = false;
};

struct AblateParams {
  std::vector<std::string> variants = {"standard", "disrupted", "dat",
                                       "dat_no_activation", "single_pose_prior"};
  int num_trials = 50;
};

struct SeedParams {
  std::uint64_t dataset = 1;
  std::uint64_t train = 2;
  std::uint64_t sample = 3;
  std::uint64_t prior = 4;
};

struct RunConfig {
  ScheduleParams schedule;
  GuidanceConfig guidance;
  ModelParams model;
  DatasetParams dataset;
  LossWeights loss_weights;
  TrainParams train;
  SampleParams sample;
  AblateParams ablate;
  SeedParams seeds;
  std::string output_dir = "out";
};

// Thrown by config validation; carries every problem found.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

// Returns the full list of violated preconditions (empty when valid).
std::vector<std::string> validate_config(const RunConfig& config);
// Throws ConfigError when validate_config reports problems.
void require_valid(const RunConfig& config);

std::string config_to_json(const RunConfig& config);
RunConfig config_from_json(const std::string& text);
void save_config(const RunConfig& config, const std::filesystem::path& path);
RunConfig load_config(const std::filesystem::path& path);

ChainVariant chain_variant_from_name(const std::string& name);

struct TrainOutputs {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_curve_csv;
};

struct SampleOutputs {
  std::filesystem::path trace_csv;
  std::filesystem::path metrics_csv;
  std::filesystem::path metrics_json;
  std::filesystem::path samples_bin;
  MetricReport report;
};

struct AblationRow {
  std::string variant;
  double mean_mpve = 0.0;
  double mean_mpjpe = 0.0;
  double mean_pa_mpjpe = 0.0;
  double mean_final_gap = 0.0;
  // Visited reverse steps until the relative gap first drops below r,
  // averaged over chains; equals the visit count when it never does.
  double mean_steps_to_threshold = 0.0;
};

struct AblationOutputs {
  std::filesystem::path table_csv;
  std::vector<AblationRow> rows;
};

TrainOutputs cmd_train(const RunConfig& config);
SampleOutputs cmd_sample(const RunConfig& config);
AblationOutputs cmd_ablate(const RunConfig& config);
std::filesystem::path cmd_gen_data(const RunConfig& config);

}  // namespace meshdiff
