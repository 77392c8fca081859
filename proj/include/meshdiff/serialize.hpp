// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "meshdiff/denoiser.hpp"
#include "meshdiff/geometry.hpp"
#include "meshdiff/guidance.hpp"
#include "meshdiff/losses.hpp"
#include "meshdiff/mesh.hpp"

namespace meshdiff {

// Formats a double with full round-trip precision so emitted CSV files are
// byte-stable across runs.
std::string format_double(double value);

// Trace CSV with columns chain,k,D_k,R_k,act.
void write_trace_csv(const std::vector<DiffusionTrace>& traces,
                     const std::filesystem::path& path);

// Flat binary layout shared by sample dumps, dataset meshes, and poses:
//   magic "MDB1" (4 bytes)
//   int64 V, J, K, record_count, rows_per_record
// followed by record_count blocks of rows_per_record x 3 real64, row-major.
struct MeshDumpHeader {
  std::int64_t vertex_count = 0;
  std::int64_t joint_count = 0;
  std::int64_t total_steps = 0;
};

void write_mesh_dump(const std::vector<Mat3>& records, const MeshDumpHeader& header,
                     const std::filesystem::path& path);
std::vector<Mat3> read_mesh_dump(const std::filesystem::path& path,
                                 MeshDumpHeader* header = nullptr);

// Metric report as CSV (header + one row) and as a single JSON object.
void write_metric_csv(const MetricReport& report, const std::filesystem::path& path);
void write_metric_json(const MetricReport& report, const std::filesystem::path& path);

struct LossCurveRow {
  int update = 0;
  double l_diff = 0.0, l_v = 0.0, l_j = 0.0, l_n = 0.0, l_e = 0.0, total = 0.0;
};

void write_loss_curve_csv(const std::vector<LossCurveRow>& rows,
                          const std::filesystem::path& path);

// Checkpoint: text header (architecture dims, target mode, seed, parameter
// count) followed by the raw real64 weight blocks in parameter order.
void save_checkpoint(const TokenDenoiser& model, DiffusionTarget target,
                     std::uint64_t seed, const std::filesystem::path& path);
TokenDenoiser load_checkpoint(const std::filesystem::path& path,
                              DiffusionTarget* target = nullptr,
                              std::uint64_t* seed = nullptr);

}  // namespace meshdiff
