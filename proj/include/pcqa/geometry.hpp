#pragma once

// Spatial primitives with brute-force semantics. Distances are always
// evaluated as dx*dx + dy*dy + dz*dz through the SIMD distance kernel or its
// scalar twin, so accelerated and exhaustive searches see identical values.
// Ties break toward the smaller index everywhere.

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "pcqa/cloud_io.hpp"

namespace pcqa {

// Structure-of-arrays copy of an M x 3 coordinate array.
class Points3 {
 public:
  Points3() = default;
  explicit Points3(std::span<const Vec3> points);

  std::size_t size() const noexcept { return x_.size(); }
  Vec3 operator[](std::size_t i) const { return {x_[i], y_[i], z_[i]}; }

  // out[i] = squared distance from point i to center.
  void sq_distances(const Vec3& center, std::span<double> out) const;
  std::vector<double> sq_distances(const Vec3& center) const;

 private:
  std::vector<double> x_, y_, z_;
};

double sq_distance(const Vec3& a, const Vec3& b);

struct NeighborIndex {
  std::int64_t center_index = -1;  // -1 when the center is not a cloud point
  std::vector<std::uint32_t> members;
  double radius_used = 0.0;
};

// k nearest points, nearest first; radius_used is the distance to the k-th.
NeighborIndex knn(const Points3& points, const Vec3& center, std::size_t k);

// Greedy maximin sampling starting at seed_index.
std::vector<std::uint32_t> farthest_point_sampling(const Points3& points, std::size_t n,
                                                   std::size_t seed_index = 0);

// In-radius points (distance <= radius) in ascending index order, truncated to
// k; short groups are padded with the smallest in-radius index.
NeighborIndex ball_query(const Points3& points, const Vec3& center, double radius, std::size_t k);

struct GrowthConfig {
  double r0 = 0.05;
  double growth = 1.5;

  bool operator==(const GrowthConfig&) const = default;
};

// Radius grows geometrically from r0 until at least k points lie within it;
// returns the k nearest of those, nearest first.
NeighborIndex grow_radius_knn(const Points3& points, const Vec3& center, std::size_t k,
                              const GrowthConfig& growth = {});

// Uniform hash grid for radius searches over large clouds.
class SpatialGrid {
 public:
  SpatialGrid(std::span<const Vec3> points, double cell_size);

  const Points3& points() const noexcept { return points_; }
  double cell_size() const noexcept { return cell_; }

  // Indices with sqrt(d2) <= radius and their squared distances, ascending index order.
  void within(const Vec3& center, double radius, std::vector<std::uint32_t>& indices,
              std::vector<double>& sq_dists) const;

 private:
  std::int64_t key(std::int64_t ix, std::int64_t iy, std::int64_t iz) const;
  std::array<std::int64_t, 3> cell_of(const Vec3& p) const;

  Points3 points_;
  std::vector<Vec3> raw_;
  double cell_;
  Vec3 origin_{};
  std::unordered_map<std::int64_t, std::vector<std::uint32_t>> cells_;
};

// Same contract as the brute-force overload.
NeighborIndex grow_radius_knn(const SpatialGrid& grid, const Vec3& center, std::size_t k,
                              const GrowthConfig& growth = {});

// For every query point, the index of its nearest target point (ties toward
// the smaller index) and the squared distance to it.
struct NearestNeighbors {
  std::vector<std::uint32_t> index;
  std::vector<double> sq_dist;
};
NearestNeighbors nearest_neighbors(std::span<const Vec3> query, std::span<const Vec3> target);

}  // namespace pcqa
