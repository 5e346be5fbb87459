#pragma once

// Key-cluster extraction: a distance-thresholded Gaussian graph over the
// normalized coordinates, a polynomial high-pass filter h(A) = sum_l h_l A^l
// with A = D^-1 W, selection of the beta strongest responses, and a growing-
// radius k-NN cluster around each selected point.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pcqa/cloud_io.hpp"
#include "pcqa/geometry.hpp"

namespace pcqa {

// Symmetric sparse adjacency in CSR form. `transition` shares the sparsity
// pattern of `weight` and holds the row-normalized values of A = D^-1 W.
struct GeometryGraph {
  std::vector<std::size_t> row_begin;  // size N + 1
  std::vector<std::uint32_t> col;
  std::vector<double> weight;
  std::vector<double> transition;
  std::vector<double> degree;
  double sigma2 = 0.0;
  double tau = 0.0;

  std::size_t size() const noexcept { return degree.size(); }
  std::size_t edge_count() const noexcept { return col.size(); }

  // y = A x for one signal column.
  void apply_transition(const std::vector<double>& x, std::vector<double>& y) const;
};

struct FilterSpec {
  std::size_t length = 4;
  std::vector<double> coefficients{1.0, -1.0, 0.0, 0.0};

  bool operator==(const FilterSpec&) const = default;
};

struct KceConfig {
  std::size_t beta = 1024;
  std::size_t k = 16;
  FilterSpec filter;
  std::optional<double> tau;     // default: tau_factor * mean nearest-neighbor distance
  std::optional<double> sigma2;  // default: mean squared length of admitted edges
  double tau_factor = 3.0;
  GrowthConfig growth;

  bool operator==(const KceConfig&) const = default;
};

// Canonical one-line rendering; equal configs give equal strings.
std::string config_key(const KceConfig& config);

GeometryGraph build_graph(const PointCloud& cloud, double tau, double sigma2);

double mean_nearest_neighbor_distance(const PointCloud& cloud);
double default_tau(const PointCloud& cloud, double tau_factor = 3.0);
double default_sigma2(const PointCloud& cloud, double tau);

// Resolves tau/sigma2 from the config (falling back to the adaptive defaults).
GeometryGraph build_graph(const PointCloud& cloud, const KceConfig& config);

// score_i = || (h(A) X)_i ||^2 over the three coordinate columns.
std::vector<double> highpass_score(const GeometryGraph& graph, const std::vector<Vec3>& coords,
                                   const FilterSpec& filter);

struct KeyPoints {
  std::vector<std::uint32_t> indices;  // score descending, ties toward smaller index
  std::vector<double> scores;
};

KeyPoints extract_key_points(const PointCloud& cloud, std::size_t beta, const KceConfig& config);

// beta x K x 6 clusters: member coordinates relative to the key point, then
// RGB scaled to [0,1]. Member 0 of every cluster is its key point.
struct KeyClusterSet {
  std::size_t beta = 0;
  std::size_t k = 0;
  std::vector<double> clusters;  // beta * k * 6, row-major
  std::vector<Vec3> centers;     // key point coordinates in the normalized frame
  std::vector<double> key_scores;
  std::vector<double> radii;     // radius_used of each cluster search (not serialized)
  std::string source_name;

  static constexpr std::size_t kFeatures = 6;

  const double* member(std::size_t cluster, std::size_t index) const {
    return clusters.data() + (cluster * k + index) * kFeatures;
  }

  // Throws ShapeMismatch on any broken invariant.
  void validate() const;
};

KeyClusterSet form_key_clusters(const PointCloud& cloud, const KeyPoints& keys, std::size_t k,
                                const GrowthConfig& growth = {});

// normalize -> key points -> clusters.
KeyClusterSet extract_key_clusters(const PointCloud& raw_cloud, const KceConfig& config);

// Binary layout: u32 magic "KCS1", u32 version, u64 beta, u64 K, then float32
// clusters (beta*K*6), centers (beta*3) and key scores (beta), little endian.
inline constexpr std::uint32_t kKeyClusterMagic = 0x3153434bu;  // "KCS1"
inline constexpr std::uint32_t kKeyClusterVersion = 1;

std::string serialize_key_clusters(const KeyClusterSet& set);
KeyClusterSet deserialize_key_clusters(const std::string& bytes);
void write_key_clusters(const KeyClusterSet& set, const std::filesystem::path& path);
KeyClusterSet read_key_clusters(const std::filesystem::path& path);

// Rounds every stored real to float32, matching what a file round trip yields.
KeyClusterSet quantize_to_float(KeyClusterSet set);

std::string summarize(const KeyClusterSet& set);

}  // namespace pcqa
