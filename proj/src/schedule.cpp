// SPDX-License-Identifier: Apache-2.0
#include "meshdiff/schedule.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace meshdiff {

void NoiseSchedule::validate() const {
  if (K < 1) throw std::invalid_argument("schedule: K must be >= 1");
  if (alphas.size() != K + 1 || sigmas.size() != K + 1)
    throw std::invalid_argument("schedule: alphas/sigmas must have length K+1");
  if (alphas[0] != 1.0)
    throw std::invalid_argument("schedule: alphas[0] must be 1");
  for (int k = 1; k <= K; ++k) {
    if (!(alphas[k] > 0.0 && alphas[k] <= 1.0))
      throw std::invalid_argument("schedule: alphas must lie in (0,1]");
    if (!(alphas[k] < alphas[k - 1]))
      throw std::invalid_argument("schedule: alphas must be strictly decreasing");
    if (sigmas[k] < 0.0)
      throw std::invalid_argument("schedule: sigmas must be non-negative");
    // Keeps the sqrt in the reverse step real for the unit hop k -> k-1.
    if (sigmas[k] * sigmas[k] > 1.0 - alphas[k - 1] + 1e-12)
      throw std::invalid_argument("schedule: sigma[k]^2 exceeds 1 - alpha[k-1]");
  }
  if (alphas[K] > 1e-3)
    throw std::invalid_argument(
        "schedule: alphas[K] must be <= 1e-3 so the terminal state is "
        "approximately standard Gaussian");
  if (steps.empty() || steps.front() != K)
    throw std::invalid_argument("schedule: steps must begin at K");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i] < 1 || steps[i] > K)
      throw std::invalid_argument("schedule: steps out of range");
    if (i > 0 && steps[i] >= steps[i - 1])
      throw std::invalid_argument("schedule: steps must be strictly decreasing");
  }
}

NoiseSchedule build_schedule(int K, double alpha_first, double alpha_last,
                             double eta, int ddim_steps) {
  if (K < 1) throw std::invalid_argument("build_schedule: K must be >= 1");
  if (!(alpha_last < alpha_first))
    throw std::invalid_argument(
        "build_schedule: alpha endpoints must satisfy alpha_last < alpha_first");
  if (!(alpha_last > 0.0 && alpha_first <= 1.0))
    throw std::invalid_argument(
        "build_schedule: alpha endpoints must lie in (0, 1]");
  if (eta < 0.0 || eta > 1.0)
    throw std::invalid_argument("build_schedule: eta must lie in [0, 1]");
  if (ddim_steps < 1 || ddim_steps > K)
    throw std::invalid_argument("build_schedule: ddim_steps must lie in [1, K]");

  NoiseSchedule s;
  s.K = K;
  s.alpha_first = alpha_first;
  s.alpha_last = alpha_last;
  s.eta = eta;
  s.alphas.resize(K + 1);
  s.sigmas.setZero(K + 1);
  s.alphas[0] = 1.0;
  if (K == 1) {
    s.alphas[1] = alpha_last;
  } else {
    for (int k = 1; k < K; ++k) {
      const double t = static_cast<double>(k - 1) / static_cast<double>(K - 1);
      s.alphas[k] = alpha_first + (alpha_last - alpha_first) * t;
    }
    s.alphas[K] = alpha_last;  // exact endpoint, no rounding drift
  }
  for (int k = 1; k <= K; ++k) {
    const double a = s.alphas[k];
    const double a_prev = s.alphas[k - 1];
    s.sigmas[k] =
        eta * std::sqrt((1.0 - a_prev) / (1.0 - a)) * std::sqrt(1.0 - a / a_prev);
  }

  s.steps.resize(ddim_steps);
  for (int i = 0; i < ddim_steps; ++i) {
    // Uniform subdivision of [0, K] into ddim_steps hops; spacing K/ddim_steps
    // >= 1 keeps the rounded values strictly decreasing.
    s.steps[i] = static_cast<int>(std::llround(
        static_cast<double>(K) * static_cast<double>(ddim_steps - i) /
        static_cast<double>(ddim_steps)));
  }

  s.validate();
  return s;
}

void save_schedule(const NoiseSchedule& sched, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_schedule: cannot open " + path.string());
  out.precision(17);
  out << "K " << sched.K << "\n";
  out << "alpha_first " << sched.alpha_first << "\n";
  out << "alpha_last " << sched.alpha_last << "\n";
  out << "eta " << sched.eta << "\n";
  out << "steps";
  for (int k : sched.steps) out << ' ' << k;
  out << "\n";
}

NoiseSchedule load_schedule(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_schedule: cannot open " + path.string());
  int K = 0;
  double alpha_first = 0, alpha_last = 0, eta = 0;
  std::vector<int> steps;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "K") ls >> K;
    else if (key == "alpha_first") ls >> alpha_first;
    else if (key == "alpha_last") ls >> alpha_last;
    else if (key == "eta") ls >> eta;
    else if (key == "steps") {
      int v;
      while (ls >> v) steps.push_back(v);
    } else {
      throw std::runtime_error("load_schedule: unknown key '" + key + "'");
    }
  }
  NoiseSchedule s = build_schedule(K, alpha_first, alpha_last, eta,
                                   static_cast<int>(steps.size()));
  if (s.steps != steps)
    throw std::runtime_error(
        "load_schedule: stored steps do not match the rebuilt subsequence");
  return s;
}

}  // namespace meshdiff
