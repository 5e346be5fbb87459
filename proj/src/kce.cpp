#include "pcqa/kce.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "pcqa/error.hpp"

namespace pcqa {

void GeometryGraph::apply_transition(const std::vector<double>& x, std::vector<double>& y) const {
  const std::size_t n = size();
  y.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t e = row_begin[i]; e < row_begin[i + 1]; ++e) acc += transition[e] * x[col[e]];
    y[i] = acc;
  }
}

namespace {

// Neighbors j != i with 0 < |x_i - x_j| < tau, ascending j, with squared lengths.
void admitted_edges(const PointCloud& cloud, double tau, std::vector<std::size_t>& row_begin,
                    std::vector<std::uint32_t>& col, std::vector<double>& sq_len) {
  const SpatialGrid grid(cloud.coords, tau);
  std::vector<std::uint32_t> idx;
  std::vector<double> d2;
  row_begin.assign(1, 0);
  col.clear();
  sq_len.clear();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    grid.within(cloud.coords[i], tau, idx, d2);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const double d = std::sqrt(d2[j]);
      if (idx[j] != i && d > 0.0 && d < tau) {
        col.push_back(idx[j]);
        sq_len.push_back(d2[j]);
      }
    }
    row_begin.push_back(col.size());
  }
}

}  // namespace

GeometryGraph build_graph(const PointCloud& cloud, double tau, double sigma2) {
  if (!(tau > 0.0) || !(sigma2 > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "build_graph requires tau > 0 and sigma2 > 0");
  }
  GeometryGraph g;
  g.tau = tau;
  g.sigma2 = sigma2;
  std::vector<double> sq_len;
  admitted_edges(cloud, tau, g.row_begin, g.col, sq_len);
  g.weight.resize(sq_len.size());
  for (std::size_t e = 0; e < sq_len.size(); ++e) g.weight[e] = std::exp(-sq_len[e] / sigma2);

  const std::size_t n = cloud.size();
  g.degree.assign(n, 0.0);
  g.transition.assign(g.weight.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (std::size_t e = g.row_begin[i]; e < g.row_begin[i + 1]; ++e) d += g.weight[e];
    g.degree[i] = d;
    if (d > 0.0) {
      for (std::size_t e = g.row_begin[i]; e < g.row_begin[i + 1]; ++e) g.transition[e] = g.weight[e] / d;
    }
  }
  return g;
}

double mean_nearest_neighbor_distance(const PointCloud& cloud) {
  if (cloud.size() < 2) throw Error(ErrorKind::CloudTooSmall, "nearest neighbor needs >= 2 points");
  const double diag = bounding_box_diagonal(cloud.coords);
  if (!(diag > 0.0)) throw Error(ErrorKind::DegenerateCloud, "all points coincide");
  const double cell = diag / std::sqrt(static_cast<double>(cloud.size()));
  const SpatialGrid grid(cloud.coords, cell);
  const GrowthConfig growth{cell * 0.5, 2.0};
  double total = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const NeighborIndex nn = grow_radius_knn(grid, cloud.coords[i], 2, growth);
    // The nearest member is the point itself or a duplicate at distance 0.
    const std::uint32_t other = nn.members[0] == i ? nn.members[1] : nn.members[0];
    total += std::sqrt(sq_distance(cloud.coords[i], cloud.coords[other]));
  }
  return total / static_cast<double>(cloud.size());
}

double default_tau(const PointCloud& cloud, double tau_factor) {
  const double tau = tau_factor * mean_nearest_neighbor_distance(cloud);
  if (!(tau > 0.0)) throw Error(ErrorKind::DegenerateCloud, "mean nearest-neighbor distance is 0");
  return tau;
}

double default_sigma2(const PointCloud& cloud, double tau) {
  std::vector<std::size_t> row_begin;
  std::vector<std::uint32_t> col;
  std::vector<double> sq_len;
  admitted_edges(cloud, tau, row_begin, col, sq_len);
  if (sq_len.empty()) return tau * tau;
  return std::accumulate(sq_len.begin(), sq_len.end(), 0.0) / static_cast<double>(sq_len.size());
}

GeometryGraph build_graph(const PointCloud& cloud, const KceConfig& config) {
  const double tau = config.tau ? *config.tau : default_tau(cloud, config.tau_factor);
  const double sigma2 = config.sigma2 ? *config.sigma2 : default_sigma2(cloud, tau);
  return build_graph(cloud, tau, sigma2);
}

std::vector<double> highpass_score(const GeometryGraph& graph, const std::vector<Vec3>& coords,
                                   const FilterSpec& filter) {
  if (filter.coefficients.size() != filter.length || filter.length == 0) {
    throw Error(ErrorKind::FilterLengthMismatch,
                "filter has " + std::to_string(filter.coefficients.size()) +
                    " coefficients for length " + std::to_string(filter.length));
  }
  const std::size_t n = graph.size();
  if (coords.size() != n) throw Error(ErrorKind::ShapeMismatch, "coords do not match the graph");
  std::vector<double> scores(n, 0.0);
  std::vector<double> power(n), next(n), filtered(n);
  for (int axis = 0; axis < 3; ++axis) {
    for (std::size_t i = 0; i < n; ++i) power[i] = coords[i][axis];
    for (std::size_t i = 0; i < n; ++i) filtered[i] = filter.coefficients[0] * power[i];
    for (std::size_t l = 1; l < filter.length; ++l) {
      graph.apply_transition(power, next);
      power.swap(next);
      const double h = filter.coefficients[l];
      if (h == 0.0) continue;
      for (std::size_t i = 0; i < n; ++i) filtered[i] += h * power[i];
    }
    for (std::size_t i = 0; i < n; ++i) scores[i] += filtered[i] * filtered[i];
  }
  return scores;
}

KeyPoints extract_key_points(const PointCloud& cloud, std::size_t beta, const KceConfig& config) {
  if (beta < 1 || cloud.size() < beta) {
    throw Error(ErrorKind::CloudTooSmall, "cloud '" + cloud.name + "' has " +
                                              std::to_string(cloud.size()) +
                                              " points, fewer than beta=" + std::to_string(beta));
  }
  const GeometryGraph graph = build_graph(cloud, config);
  const std::vector<double> scores = highpass_score(graph, cloud.coords, config.filter);
  std::vector<std::uint32_t> order(cloud.size());
  std::iota(order.begin(), order.end(), 0u);
  auto higher = [&](std::uint32_t a, std::uint32_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(beta), order.end(),
                    higher);
  KeyPoints keys;
  keys.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(beta));
  keys.scores.reserve(beta);
  for (std::uint32_t i : keys.indices) keys.scores.push_back(scores[i]);
  return keys;
}

void KeyClusterSet::validate() const {
  if (beta == 0 || k == 0) throw Error(ErrorKind::ShapeMismatch, "empty key cluster set");
  if (clusters.size() != beta * k * kFeatures || centers.size() != beta ||
      key_scores.size() != beta) {
    throw Error(ErrorKind::ShapeMismatch, "key cluster arrays disagree with beta x K");
  }
  for (std::size_t i = 1; i < beta; ++i) {
    if (key_scores[i] > key_scores[i - 1]) {
      throw Error(ErrorKind::ShapeMismatch, "key scores are not sorted non-increasing");
    }
  }
}

KeyClusterSet form_key_clusters(const PointCloud& cloud, const KeyPoints& keys, std::size_t k,
                                const GrowthConfig& growth) {
  if (k < 1) throw Error(ErrorKind::InvalidArgument, "cluster size K must be >= 1");
  if (k > cloud.size()) {
    throw Error(ErrorKind::KTooLarge, "K=" + std::to_string(k) + " exceeds cloud size " +
                                          std::to_string(cloud.size()));
  }
  const std::size_t beta = keys.indices.size();
  KeyClusterSet set;
  set.beta = beta;
  set.k = k;
  set.source_name = cloud.name;
  set.key_scores = keys.scores;
  set.clusters.resize(beta * k * KeyClusterSet::kFeatures);
  set.centers.resize(beta);
  set.radii.resize(beta);

  // Expected k-NN radius on a unit-scale surface sampling; any cell size is correct.
  const double cell = std::max(growth.r0, 2.0 * std::sqrt(static_cast<double>(k) /
                                                          static_cast<double>(cloud.size())));
  const SpatialGrid grid(cloud.coords, cell);
  for (std::size_t c = 0; c < beta; ++c) {
    const std::uint32_t key = keys.indices[c];
    const Vec3& center = cloud.coords[key];
    NeighborIndex nb = grow_radius_knn(grid, center, k, growth);
    // Duplicates at distance zero may precede the key point; move it to the front.
    auto it = std::find(nb.members.begin(), nb.members.end(), key);
    if (it != nb.members.end()) {
      std::rotate(nb.members.begin(), it, it + 1);
    } else {
      nb.members.insert(nb.members.begin(), key);
      nb.members.pop_back();
    }
    set.centers[c] = center;
    set.radii[c] = nb.radius_used;
    for (std::size_t m = 0; m < k; ++m) {
      const std::uint32_t p = nb.members[m];
      double* row = set.clusters.data() + (c * k + m) * KeyClusterSet::kFeatures;
      for (int a = 0; a < 3; ++a) row[a] = cloud.coords[p][a] - center[a];
      for (int ch = 0; ch < 3; ++ch) row[3 + ch] = cloud.colors[p][ch] / 255.0;
    }
  }
  return set;
}

KeyClusterSet extract_key_clusters(const PointCloud& raw_cloud, const KceConfig& config) {
  if (raw_cloud.size() < config.beta) {
    throw Error(ErrorKind::CloudTooSmall, "cloud '" + raw_cloud.name + "' has " +
                                              std::to_string(raw_cloud.size()) +
                                              " points, fewer than beta=" +
                                              std::to_string(config.beta));
  }
  const PointCloud cloud = normalize_cloud(raw_cloud);
  const KeyPoints keys = extract_key_points(cloud, config.beta, config);
  return form_key_clusters(cloud, keys, config.k, config.growth);
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

template <typename T>
void put(std::string& out, T value) {
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    auto* bytes = reinterpret_cast<unsigned char*>(&value);
    std::reverse(bytes, bytes + sizeof(T));
  }
  out.append(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& offset) {
  if (offset + sizeof(T) > in.size()) {
    throw Error(ErrorKind::TruncatedBody, "key cluster file ends early");
  }
  T value;
  std::memcpy(&value, in.data() + offset, sizeof(T));
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    auto* bytes = reinterpret_cast<unsigned char*>(&value);
    std::reverse(bytes, bytes + sizeof(T));
  }
  offset += sizeof(T);
  return value;
}

double to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

std::string serialize_key_clusters(const KeyClusterSet& set) {
  set.validate();
  std::string out;
  out.reserve(24 + 4 * (set.clusters.size() + 4 * set.beta));
  put<std::uint32_t>(out, kKeyClusterMagic);
  put<std::uint32_t>(out, kKeyClusterVersion);
  put<std::uint64_t>(out, set.beta);
  put<std::uint64_t>(out, set.k);
  for (double v : set.clusters) put<float>(out, static_cast<float>(v));
  for (const auto& c : set.centers) {
    for (double v : c) put<float>(out, static_cast<float>(v));
  }
  for (double v : set.key_scores) put<float>(out, static_cast<float>(v));
  return out;
}

KeyClusterSet deserialize_key_clusters(const std::string& bytes) {
  std::size_t offset = 0;
  if (get<std::uint32_t>(bytes, offset) != kKeyClusterMagic) {
    throw Error(ErrorKind::MalformedHeader, "not a key cluster file");
  }
  const auto version = get<std::uint32_t>(bytes, offset);
  if (version != kKeyClusterVersion) {
    throw Error(ErrorKind::MalformedHeader, "unsupported key cluster version " + std::to_string(version));
  }
  KeyClusterSet set;
  set.beta = get<std::uint64_t>(bytes, offset);
  set.k = get<std::uint64_t>(bytes, offset);
  const std::size_t expected = 24 + 4 * (set.beta * set.k * KeyClusterSet::kFeatures + 4 * set.beta);
  if (bytes.size() < expected) throw Error(ErrorKind::TruncatedBody, "key cluster payload too short");
  set.clusters.resize(set.beta * set.k * KeyClusterSet::kFeatures);
  for (double& v : set.clusters) v = get<float>(bytes, offset);
  set.centers.resize(set.beta);
  for (auto& c : set.centers) {
    for (double& v : c) v = get<float>(bytes, offset);
  }
  set.key_scores.resize(set.beta);
  for (double& v : set.key_scores) v = get<float>(bytes, offset);
  set.validate();
  return set;
}

void write_key_clusters(const KeyClusterSet& set, const std::filesystem::path& path) {
  const std::string bytes = serialize_key_clusters(set);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

KeyClusterSet read_key_clusters(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  KeyClusterSet set = deserialize_key_clusters(bytes);
  set.source_name = path.stem().string();
  return set;
}

KeyClusterSet quantize_to_float(KeyClusterSet set) {
  for (double& v : set.clusters) v = to_float(v);
  for (auto& c : set.centers) {
    for (double& v : c) v = to_float(v);
  }
  for (double& v : set.key_scores) v = to_float(v);
  return set;
}

std::string config_key(const KceConfig& config) {
  auto real = [](double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  };
  std::string out = "beta=" + std::to_string(config.beta) + ";k=" + std::to_string(config.k) +
                    ";filter=" + std::to_string(config.filter.length) + ":";
  for (double c : config.filter.coefficients) out += real(c) + ",";
  out += ";tau=" + (config.tau ? real(*config.tau) : std::string("auto"));
  out += ";sigma2=" + (config.sigma2 ? real(*config.sigma2) : std::string("auto"));
  out += ";tau_factor=" + real(config.tau_factor) + ";r0=" + real(config.growth.r0) +
         ";growth=" + real(config.growth.growth);
  return out;
}

std::string summarize(const KeyClusterSet& set) {
  std::ostringstream out;
  out << "source=" << set.source_name << "\n"
      << "beta=" << set.beta << "\n"
      << "k=" << set.k << "\n"
      << "features=" << KeyClusterSet::kFeatures << "\n";
  if (!set.key_scores.empty()) {
    out << "score_max=" << set.key_scores.front() << "\n"
        << "score_min=" << set.key_scores.back() << "\n";
  }
  if (!set.radii.empty()) {
    const auto [lo, hi] = std::minmax_element(set.radii.begin(), set.radii.end());
    out << "radius_min=" << *lo << "\n"
        << "radius_max=" << *hi << "\n";
  }
  return out.str();
}

}  // namespace pcqa
