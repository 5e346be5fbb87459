#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pcqa/cloud_io.hpp"
#include "pcqa/error.hpp"
#include "pcqa/kce.hpp"
#include "pcqa/network.hpp"

namespace pcqa::test {

inline PointCloud random_cloud(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  std::uniform_int_distribution<int> c(0, 255);
  PointCloud pc;
  pc.name = "random" + std::to_string(seed);
  for (std::size_t i = 0; i < n; ++i) {
    pc.coords.push_back({u(rng), u(rng), u(rng)});
    pc.colors.push_back({static_cast<std::uint8_t>(c(rng)), static_cast<std::uint8_t>(c(rng)),
                         static_cast<std::uint8_t>(c(rng))});
  }
  return pc;
}

// Rounds through float32. The volatile keeps g++ 11 at -O3 from folding the
// round trip away inside vectorized loops.
inline double round_to_float(double v) {
  volatile float f = static_cast<float>(v);
  return static_cast<double>(f);
}

inline bool is_float(double v) { return round_to_float(v) == v; }

// Coordinates representable in float32, so PLY round trips are exact.
inline PointCloud float_cloud(std::size_t n, std::uint64_t seed) {
  PointCloud pc = random_cloud(n, seed, 10.0);
  for (auto& p : pc.coords) {
    for (double& v : p) v = round_to_float(v);
  }
  return pc;
}

// Kind of the pcqa::Error thrown by f, nullopt when f returns normally.
inline std::optional<ErrorKind> kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

inline std::vector<Vec3> random_points(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  return random_cloud(n, seed, scale).coords;
}

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("pcqa_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline KeyClusterSet random_clusters(std::size_t beta, std::size_t k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  KeyClusterSet set;
  set.beta = beta;
  set.k = k;
  for (std::size_t c = 0; c < beta; ++c) {
    set.centers.push_back({n(rng) * 1.5, n(rng) * 1.5, n(rng) * 1.5});
    set.key_scores.push_back(static_cast<double>(beta - c));
    for (std::size_t m = 0; m < k; ++m) {
      for (int a = 0; a < 3; ++a) set.clusters.push_back(m == 0 ? 0.0 : n(rng) * 0.1);
      for (int a = 0; a < 3; ++a) set.clusters.push_back(u(rng));
    }
  }
  set.radii.assign(beta, 0.1);
  set.source_name = "synthetic";
  return set;
}

// Network small enough for finite differences: beta = 8, K = 4.
inline NetworkConfig tiny_network() {
  NetworkConfig c;
  c.fe_channels = {8, 8};
  c.afe1_channels = {8, 10};
  c.afe2_channels = {12, 16};
  c.afe1 = {4, 3, 0.8};
  c.afe2 = {2, 3, 0.9};
  c.head_widths = {8};
  c.dropout = 0.0;
  return c;
}

inline double rel_error(double a, double b, double floor = 1e-5) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace pcqa::test
