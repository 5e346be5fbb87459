#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "pcqa/cloud_io.hpp"

namespace pcqa {

enum class DistortionKind { color_noise, geometry_gaussian, downsample, octree_quantize };

inline constexpr int kMinLevel = 1;
inline constexpr int kMaxLevel = 5;

std::string_view to_string(DistortionKind kind);
DistortionKind parse_distortion_kind(std::string_view text);
const std::vector<DistortionKind>& all_distortion_kinds();

struct DistortionSpec {
  DistortionKind kind = DistortionKind::color_noise;
  int level = 1;  // 1 (mildest) .. 5
  std::uint64_t seed = 0;
};

// Per-level strength: color sigma (0-255 units), geometry sigma (fraction of
// the bounding-box diagonal), kept fraction, or quantizer bits per axis.
double level_parameter(DistortionKind kind, int level);

// Deterministic in (cloud, spec).
PointCloud apply_distortion(const PointCloud& cloud, const DistortionSpec& spec);

// Symmetric point-to-point geometry RMSE divided by the reference diagonal.
double geometry_rmse(const PointCloud& ref, const PointCloud& dist);
// Symmetric nearest-neighbor luminance (BT.601) RMSE in 0-255 units.
double luma_rmse(const PointCloud& ref, const PointCloud& dist);

struct PseudoMosConstants {
  double a = 120.0;  // per unit of diagonal-normalized geometry RMSE
  double b = 45.0;   // per unit of luma RMSE / 255
};

// 10 - a * geometry_rmse - b * luma_rmse / 255, clamped to [1, 10].
double pseudo_mos(const PointCloud& ref, const PointCloud& dist, const PseudoMosConstants& k = {});

// Parametric colored surfaces used as clean references (sphere, torus, box, ...).
std::vector<PointCloud> make_reference_clouds(std::size_t count, std::size_t points,
                                              std::uint64_t seed);

struct CorpusOptions {
  std::vector<DistortionKind> kinds = all_distortion_kinds();
  std::vector<int> levels{1, 2, 3, 4, 5};
  std::vector<std::uint64_t> seeds{0};
  double test_fraction = 0.2;
  std::uint64_t split_seed = 0;
  std::string source = "synthetic";
  PseudoMosConstants constants;
};

// File name of a distorted cloud: <reference>__<kind>_L<level>_s<seed>.ply
std::string distorted_file_name(std::string_view reference, const DistortionSpec& spec);
// Inverse of distorted_file_name for the reference part.
std::string reference_of(std::string_view path);

// Writes |refs| x |kinds| x |levels| x |seeds| PLYs plus manifest.csv and
// distortions.txt into out_dir. Whole references are assigned to one split.
DatasetManifest synthesize_corpus(const std::vector<PointCloud>& refs, const CorpusOptions& options,
                                  const std::filesystem::path& out_dir);

}  // namespace pcqa
