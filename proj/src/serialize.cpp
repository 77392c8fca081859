// SPDX-License-Identifier: Apache-2.0
#include "meshdiff/serialize.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace meshdiff {

namespace {

constexpr char kMeshDumpMagic[4] = {'M', 'D', 'B', '1'};

void write_i64(std::ofstream& out, std::int64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::int64_t read_i64(std::ifstream& in) {
  std::int64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw std::runtime_error("mesh dump: truncated header");
  return v;
}

}  // namespace

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

void write_trace_csv(const std::vector<DiffusionTrace>& traces,
                     const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_trace_csv: cannot open " + path.string());
  out << "chain,k,D_k,R_k,act\n";
  for (std::size_t c = 0; c < traces.size(); ++c)
    for (const auto& row : traces[c].rows)
      out << c << ',' << row.k << ',' << format_double(row.gap) << ','
          << format_double(row.relative_gap) << ',' << (row.act ? 1 : 0) << "\n";
}

void write_mesh_dump(const std::vector<Mat3>& records, const MeshDumpHeader& header,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_mesh_dump: cannot open " + path.string());
  out.write(kMeshDumpMagic, 4);
  write_i64(out, header.vertex_count);
  write_i64(out, header.joint_count);
  write_i64(out, header.total_steps);
  write_i64(out, static_cast<std::int64_t>(records.size()));
  const std::int64_t rows = records.empty() ? 0 : records.front().rows();
  write_i64(out, rows);
  for (const auto& m : records) {
    if (m.rows() != rows)
      throw std::invalid_argument("write_mesh_dump: ragged record rows");
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < 3; ++j) {
        const double v = m(i, j);
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
  }
}

std::vector<Mat3> read_mesh_dump(const std::filesystem::path& path,
                                 MeshDumpHeader* header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_mesh_dump: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMeshDumpMagic, 4) != 0)
    throw std::runtime_error("read_mesh_dump: bad magic in " + path.string());
  MeshDumpHeader h;
  h.vertex_count = read_i64(in);
  h.joint_count = read_i64(in);
  h.total_steps = read_i64(in);
  const std::int64_t count = read_i64(in);
  const std::int64_t rows = read_i64(in);
  std::vector<Mat3> records;
  records.reserve(count);
  for (std::int64_t r = 0; r < count; ++r) {
    Mat3 m(rows, 3);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < 3; ++j) {
        double v;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        if (!in) throw std::runtime_error("read_mesh_dump: truncated records");
        m(i, j) = v;
      }
    records.push_back(std::move(m));
  }
  if (header) *header = h;
  return records;
}

void write_metric_csv(const MetricReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_metric_csv: cannot open " + path.string());
  out << "mpve,mpjpe,pa_mpjpe,f_at_small,f_at_large\n";
  out << format_double(report.mpve) << ',' << format_double(report.mpjpe) << ','
      << format_double(report.pa_mpjpe) << ',' << format_double(report.f_at_small)
      << ',' << format_double(report.f_at_large) << "\n";
}

void write_metric_json(const MetricReport& report, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["mpve"] = report.mpve;
  j["mpjpe"] = report.mpjpe;
  j["pa_mpjpe"] = report.pa_mpjpe;
  j["f_at_small"] = report.f_at_small;
  j["f_at_large"] = report.f_at_large;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_metric_json: cannot open " + path.string());
  out << j.dump(2) << "\n";
}

void write_loss_curve_csv(const std::vector<LossCurveRow>& rows,
                          const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("write_loss_curve_csv: cannot open " + path.string());
  out << "update_index,L_Diff,L_v,L_j,L_n,L_e,total\n";
  for (const auto& r : rows)
    out << r.update << ',' << format_double(r.l_diff) << ',' << format_double(r.l_v)
        << ',' << format_double(r.l_j) << ',' << format_double(r.l_n) << ','
        << format_double(r.l_e) << ',' << format_double(r.total) << "\n";
}

void save_checkpoint(const TokenDenoiser& model, DiffusionTarget target,
                     std::uint64_t seed, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
  const auto& cfg = model.config();
  out << "meshdiff-checkpoint v1\n";
  out << "vertex_count " << cfg.vertex_count << "\n";
  out << "d_id " << cfg.d_id << "\n";
  out << "d_step " << cfg.d_step << "\n";
  out << "d_ctx " << cfg.d_ctx << "\n";
  out << "target_mode "
      << (target == DiffusionTarget::epsilon ? "epsilon" : "step_difference")
      << "\n";
  out << "seed " << seed << "\n";
  out << "parameter_count " << model.parameter_count() << "\n";
  out << "weights\n";
  for (const auto* p : model.parameters()) {
    for (Eigen::Index i = 0; i < p->rows(); ++i)
      for (Eigen::Index j = 0; j < p->cols(); ++j) {
        const double v = (*p)(i, j);
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
  }
}

TokenDenoiser load_checkpoint(const std::filesystem::path& path,
                              DiffusionTarget* target, std::uint64_t* seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "meshdiff-checkpoint v1")
    throw std::runtime_error("load_checkpoint: unrecognized header '" + line + "'");

  TokenDenoiserConfig cfg;
  DiffusionTarget tgt = DiffusionTarget::epsilon;
  std::uint64_t stored_seed = 0;
  std::size_t stored_params = 0;
  while (std::getline(in, line)) {
    if (line == "weights") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "vertex_count") ls >> cfg.vertex_count;
    else if (key == "d_id") ls >> cfg.d_id;
    else if (key == "d_step") ls >> cfg.d_step;
    else if (key == "d_ctx") ls >> cfg.d_ctx;
    else if (key == "target_mode") {
      std::string mode;
      ls >> mode;
      if (mode == "epsilon") tgt = DiffusionTarget::epsilon;
      else if (mode == "step_difference") tgt = DiffusionTarget::step_difference;
      else throw std::runtime_error("load_checkpoint: bad target_mode " + mode);
    } else if (key == "seed") ls >> stored_seed;
    else if (key == "parameter_count") ls >> stored_params;
    else throw std::runtime_error("load_checkpoint: unknown key '" + key + "'");
  }

  TokenDenoiser model(cfg);
  if (model.parameter_count() != stored_params)
    throw std::runtime_error(
        "load_checkpoint: architecture mismatch (parameter count " +
        std::to_string(stored_params) + " stored, " +
        std::to_string(model.parameter_count()) + " expected)");
  for (auto* p : model.parameters()) {
    for (Eigen::Index i = 0; i < p->rows(); ++i)
      for (Eigen::Index j = 0; j < p->cols(); ++j) {
        double v;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        if (!in) throw std::runtime_error("load_checkpoint: truncated weights");
        (*p)(i, j) = v;
      }
  }
  if (target) *target = tgt;
  if (seed) *seed = stored_seed;
  return model;
}

}  // namespace meshdiff
