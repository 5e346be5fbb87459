#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pcqa {

using Vec3 = std::array<double, 3>;
using Rgb = std::array<std::uint8_t, 3>;

// Recorded by normalize_cloud: normalized = (original - centroid) / scale.
struct Normalization {
  Vec3 centroid{0.0, 0.0, 0.0};
  double scale = 1.0;
};

struct PointCloud {
  std::vector<Vec3> coords;
  std::vector<Rgb> colors;
  std::string name;
  std::optional<Normalization> normalization;

  std::size_t size() const noexcept { return coords.size(); }

  // Throws ShapeMismatch / InvalidArgument when an invariant is broken.
  void validate() const;
};

enum class PlyEncoding { ascii, binary_little_endian };

// Reads the vertex element (x,y,z + red,green,blue); other elements and
// properties are skipped.
PointCloud load_ply(const std::filesystem::path& path);

// Writes float x,y,z and uchar red,green,blue.
void save_ply(const PointCloud& cloud, const std::filesystem::path& path,
              PlyEncoding encoding = PlyEncoding::binary_little_endian);

// Centroid to the origin, maximum point norm to 1. Colors untouched.
PointCloud normalize_cloud(const PointCloud& cloud);

Vec3 centroid(const std::vector<Vec3>& coords);
std::pair<Vec3, Vec3> bounding_box(const std::vector<Vec3>& coords);
double bounding_box_diagonal(const std::vector<Vec3>& coords);

enum class Split { train, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct ManifestEntry {
  std::string path;
  double mos = 0.0;
  Split split = Split::train;
  std::string source;

  bool operator==(const ManifestEntry&) const = default;
};

// CSV with header `path,mos,split,source`. Lines starting with '#' carry
// `key=value` metadata; `mos_scale=lo,hi` is interpreted, the rest is kept
// verbatim in `notes`. Relative paths resolve against the manifest directory.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  double mos_lo = 1.0;
  double mos_hi = 10.0;
  std::vector<std::pair<std::string, std::string>> notes;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const ManifestEntry& entry) const;
  std::size_t count(Split split) const;

  // Range, split disjointness, and optionally that each path is a readable file.
  void validate(bool check_paths) const;

  bool operator==(const DatasetManifest& other) const {
    return entries == other.entries && mos_lo == other.mos_lo && mos_hi == other.mos_hi &&
           notes == other.notes;
  }
};

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

}  // namespace pcqa
