#include "pcqa/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pcqa/error.hpp"
#include "pcqa/simd.hpp"

namespace pcqa {

Points3::Points3(std::span<const Vec3> points) {
  x_.resize(points.size());
  y_.resize(points.size());
  z_.resize(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    x_[i] = points[i][0];
    y_[i] = points[i][1];
    z_[i] = points[i][2];
  }
}

void Points3::sq_distances(const Vec3& center, std::span<double> out) const {
  simd::kernels().sq_dist(x_.data(), y_.data(), z_.data(), size(), center[0], center[1],
                          center[2], out.data());
}

std::vector<double> Points3::sq_distances(const Vec3& center) const {
  std::vector<double> out(size());
  sq_distances(center, out);
  return out;
}

double sq_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

namespace {

// Orders (squared distance, index) pairs lexicographically and keeps the first k indices.
std::vector<std::uint32_t> nearest_k(std::vector<std::pair<double, std::uint32_t>> candidates,
                                     std::size_t k) {
  if (k < candidates.size()) {
    std::nth_element(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k),
                     candidates.end());
    candidates.resize(k);
  }
  std::sort(candidates.begin(), candidates.end());
  std::vector<std::uint32_t> out(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) out[i] = candidates[i].second;
  return out;
}

double grown_radius(double kth_distance, const GrowthConfig& growth) {
  if (!(growth.r0 > 0.0) || !(growth.growth > 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "grow_radius_knn requires r0 > 0 and growth > 1");
  }
  double r = growth.r0;
  while (r < kth_distance) r *= growth.growth;
  return r;
}

}  // namespace

NeighborIndex knn(const Points3& points, const Vec3& center, std::size_t k) {
  if (k < 1 || k > points.size()) {
    throw Error(ErrorKind::KTooLarge, "knn needs 1 <= k <= M (k=" + std::to_string(k) +
                                          ", M=" + std::to_string(points.size()) + ")");
  }
  const std::vector<double> d2 = points.sq_distances(center);
  std::vector<std::pair<double, std::uint32_t>> all(points.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = {d2[i], static_cast<std::uint32_t>(i)};
  NeighborIndex result;
  result.members = nearest_k(std::move(all), k);
  result.radius_used = std::sqrt(d2[result.members.back()]);
  return result;
}

std::vector<std::uint32_t> farthest_point_sampling(const Points3& points, std::size_t n,
                                                   std::size_t seed_index) {
  const std::size_t m = points.size();
  if (n < 1 || n > m) {
    throw Error(ErrorKind::NTooLarge, "farthest_point_sampling needs 1 <= n <= M (n=" +
                                          std::to_string(n) + ", M=" + std::to_string(m) + ")");
  }
  if (seed_index >= m) throw Error(ErrorKind::InvalidArgument, "FPS seed index out of range");

  std::vector<double> min_d2(m, std::numeric_limits<double>::infinity());
  std::vector<double> d2(m);
  std::vector<std::uint32_t> selected;
  selected.reserve(n);
  std::size_t current = seed_index;
  for (std::size_t step = 0; step < n; ++step) {
    selected.push_back(static_cast<std::uint32_t>(current));
    points.sq_distances(points[current], d2);
    std::size_t best = 0;
    double best_d2 = -1.0;
    for (std::size_t i = 0; i < m; ++i) {
      min_d2[i] = std::min(min_d2[i], d2[i]);
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    current = best;
  }
  return selected;
}

NeighborIndex ball_query(const Points3& points, const Vec3& center, double radius, std::size_t k) {
  if (!(radius > 0.0) || k < 1) {
    throw Error(ErrorKind::InvalidArgument, "ball_query needs radius > 0 and k >= 1");
  }
  const std::vector<double> d2 = points.sq_distances(center);
  NeighborIndex result;
  result.radius_used = radius;
  result.members.reserve(k);
  for (std::size_t i = 0; i < points.size() && result.members.size() < k; ++i) {
    if (std::sqrt(d2[i]) <= radius) result.members.push_back(static_cast<std::uint32_t>(i));
  }
  if (result.members.empty()) throw Error(ErrorKind::EmptyBall, "no point within radius");
  result.members.resize(k, result.members.front());
  return result;
}

NeighborIndex grow_radius_knn(const Points3& points, const Vec3& center, std::size_t k,
                              const GrowthConfig& growth) {
  NeighborIndex nearest = knn(points, center, k);
  nearest.radius_used = grown_radius(nearest.radius_used, growth);
  return nearest;
}

// ---------------------------------------------------------------------------

SpatialGrid::SpatialGrid(std::span<const Vec3> points, double cell_size)
    : points_(points), raw_(points.begin(), points.end()), cell_(cell_size) {
  if (!(cell_size > 0.0)) throw Error(ErrorKind::InvalidArgument, "grid cell size must be > 0");
  if (!raw_.empty()) origin_ = bounding_box(raw_).first;
  for (std::size_t i = 0; i < raw_.size(); ++i) {
    const auto c = cell_of(raw_[i]);
    cells_[key(c[0], c[1], c[2])].push_back(static_cast<std::uint32_t>(i));
  }
}

std::int64_t SpatialGrid::key(std::int64_t ix, std::int64_t iy, std::int64_t iz) const {
  // 21 bits per axis is ample for normalized clouds at any useful cell size.
  constexpr std::int64_t mask = (std::int64_t{1} << 21) - 1;
  return ((ix & mask) << 42) | ((iy & mask) << 21) | (iz & mask);
}

std::array<std::int64_t, 3> SpatialGrid::cell_of(const Vec3& p) const {
  return {static_cast<std::int64_t>(std::floor((p[0] - origin_[0]) / cell_)),
          static_cast<std::int64_t>(std::floor((p[1] - origin_[1]) / cell_)),
          static_cast<std::int64_t>(std::floor((p[2] - origin_[2]) / cell_))};
}

void SpatialGrid::within(const Vec3& center, double radius, std::vector<std::uint32_t>& indices,
                         std::vector<double>& sq_dists) const {
  indices.clear();
  sq_dists.clear();
  const auto lo = cell_of({center[0] - radius, center[1] - radius, center[2] - radius});
  const auto hi = cell_of({center[0] + radius, center[1] + radius, center[2] + radius});
  const std::int64_t span = (hi[0] - lo[0] + 1) * (hi[1] - lo[1] + 1) * (hi[2] - lo[2] + 1);
  if (span > static_cast<std::int64_t>(cells_.size()) * 4) {
    // Query box covers most of the cloud; a linear scan is cheaper.
    const std::vector<double> d2 = points_.sq_distances(center);
    for (std::size_t i = 0; i < d2.size(); ++i) {
      if (std::sqrt(d2[i]) <= radius) {
        indices.push_back(static_cast<std::uint32_t>(i));
        sq_dists.push_back(d2[i]);
      }
    }
    return;
  }
  for (std::int64_t ix = lo[0]; ix <= hi[0]; ++ix) {
    for (std::int64_t iy = lo[1]; iy <= hi[1]; ++iy) {
      for (std::int64_t iz = lo[2]; iz <= hi[2]; ++iz) {
        auto it = cells_.find(key(ix, iy, iz));
        if (it == cells_.end()) continue;
        for (std::uint32_t i : it->second) {
          const double d2 = sq_distance(raw_[i], center);
          if (std::sqrt(d2) <= radius) indices.push_back(i);
        }
      }
    }
  }
  std::sort(indices.begin(), indices.end());
  sq_dists.reserve(indices.size());
  for (std::uint32_t i : indices) sq_dists.push_back(sq_distance(raw_[i], center));
}

NeighborIndex grow_radius_knn(const SpatialGrid& grid, const Vec3& center, std::size_t k,
                              const GrowthConfig& growth) {
  const Points3& points = grid.points();
  if (k < 1 || k > points.size()) {
    throw Error(ErrorKind::KTooLarge, "grow_radius_knn needs 1 <= k <= M");
  }
  if (!(growth.r0 > 0.0) || !(growth.growth > 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "grow_radius_knn requires r0 > 0 and growth > 1");
  }
  std::vector<std::uint32_t> indices;
  std::vector<double> d2;
  double r = growth.r0;
  while (true) {
    grid.within(center, r, indices, d2);
    if (indices.size() >= k) break;
    r *= growth.growth;
  }
  std::vector<std::pair<double, std::uint32_t>> candidates(indices.size());
  for (std::size_t j = 0; j < indices.size(); ++j) candidates[j] = {d2[j], indices[j]};
  NeighborIndex result;
  result.members = nearest_k(std::move(candidates), k);
  result.radius_used = r;
  return result;
}

NearestNeighbors nearest_neighbors(std::span<const Vec3> query, std::span<const Vec3> target) {
  if (target.empty()) throw Error(ErrorKind::InvalidArgument, "nearest_neighbors: empty target");
  NearestNeighbors out;
  out.index.resize(query.size());
  out.sq_dist.resize(query.size());
  const std::vector<Vec3> target_copy(target.begin(), target.end());
  const double diag = bounding_box_diagonal(target_copy);
  const double cell = diag > 0.0 ? diag / std::sqrt(static_cast<double>(target.size())) : 1.0;
  const SpatialGrid grid(target, cell);
  const GrowthConfig growth{cell * 0.5, 2.0};
  for (std::size_t i = 0; i < query.size(); ++i) {
    const NeighborIndex nb = grow_radius_knn(grid, query[i], 1, growth);
    out.index[i] = nb.members[0];
    out.sq_dist[i] = sq_distance(target[nb.members[0]], query[i]);
  }
  return out;
}

}  // namespace pcqa
