#include "pcqa/distortion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "pcqa/error.hpp"
#include "pcqa/geometry.hpp"

namespace pcqa {

std::string_view to_string(DistortionKind kind) {
  switch (kind) {
    case DistortionKind::color_noise: return "color-noise";
    case DistortionKind::geometry_gaussian: return "geometry-gaussian";
    case DistortionKind::downsample: return "downsample";
    case DistortionKind::octree_quantize: return "octree-quantize";
  }
  return "unknown";
}

DistortionKind parse_distortion_kind(std::string_view text) {
  for (DistortionKind k : all_distortion_kinds()) {
    if (to_string(k) == text) return k;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown distortion kind '" + std::string(text) + "'");
}

const std::vector<DistortionKind>& all_distortion_kinds() {
  static const std::vector<DistortionKind> kinds{
      DistortionKind::color_noise, DistortionKind::geometry_gaussian, DistortionKind::downsample,
      DistortionKind::octree_quantize};
  return kinds;
}

double level_parameter(DistortionKind kind, int level) {
  if (level < kMinLevel || level > kMaxLevel) {
    throw Error(ErrorKind::InvalidArgument, "distortion level must be in 1..5");
  }
  static constexpr double color_sigma[] = {4, 8, 16, 32, 64};
  static constexpr double geometry_sigma[] = {0.001, 0.002, 0.004, 0.008, 0.016};
  static constexpr double keep_fraction[] = {0.9, 0.7, 0.5, 0.3, 0.15};
  static constexpr double bits[] = {10, 9, 8, 7, 6};
  const auto i = static_cast<std::size_t>(level - 1);
  switch (kind) {
    case DistortionKind::color_noise: return color_sigma[i];
    case DistortionKind::geometry_gaussian: return geometry_sigma[i];
    case DistortionKind::downsample: return keep_fraction[i];
    case DistortionKind::octree_quantize: return bits[i];
  }
  return 0.0;
}

namespace {

std::uint8_t clamp_color(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
}

PointCloud add_color_noise(const PointCloud& cloud, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  PointCloud out = cloud;
  for (auto& rgb : out.colors) {
    for (auto& c : rgb) c = clamp_color(c + sigma * normal(rng));
  }
  return out;
}

PointCloud add_geometry_noise(const PointCloud& cloud, double fraction, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sigma = fraction * bounding_box_diagonal(cloud.coords);
  PointCloud out = cloud;
  for (auto& p : out.coords) {
    for (double& v : p) v += sigma * normal(rng);
  }
  return out;
}

PointCloud downsample(const PointCloud& cloud, double keep, std::mt19937_64& rng) {
  // One uniform draw per point: subsets for a fixed seed are nested across levels.
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  PointCloud out;
  out.name = cloud.name;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (uniform(rng) < keep) {
      out.coords.push_back(cloud.coords[i]);
      out.colors.push_back(cloud.colors[i]);
    }
  }
  if (out.coords.empty()) throw Error(ErrorKind::EmptyResult, "downsampling removed every point");
  return out;
}

PointCloud octree_quantize(const PointCloud& cloud, int bits) {
  const auto [lo, hi] = bounding_box(cloud.coords);
  const double side = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
  const double cells = std::ldexp(1.0, bits) - 1.0;
  const double step = side > 0.0 ? side / cells : 1.0;

  struct Cell {
    std::size_t order;
    Vec3 coord;
    std::array<double, 3> color_sum{};
    std::size_t count = 0;
  };
  std::map<std::array<std::int64_t, 3>, Cell> cells_by_key;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    std::array<std::int64_t, 3> q{};
    Vec3 snapped{};
    for (int a = 0; a < 3; ++a) {
      q[a] = static_cast<std::int64_t>(std::round((cloud.coords[i][a] - lo[a]) / step));
      snapped[a] = lo[a] + static_cast<double>(q[a]) * step;
    }
    auto [it, inserted] = cells_by_key.try_emplace(q, Cell{cells_by_key.size(), snapped});
    for (int c = 0; c < 3; ++c) it->second.color_sum[c] += cloud.colors[i][c];
    ++it->second.count;
  }
  std::vector<const Cell*> ordered(cells_by_key.size());
  for (const auto& [key, cell] : cells_by_key) ordered[cell.order] = &cell;
  PointCloud out;
  out.name = cloud.name;
  out.coords.reserve(ordered.size());
  out.colors.reserve(ordered.size());
  for (const Cell* cell : ordered) {
    out.coords.push_back(cell->coord);
    Rgb rgb{};
    for (int c = 0; c < 3; ++c) rgb[c] = clamp_color(cell->color_sum[c] / static_cast<double>(cell->count));
    out.colors.push_back(rgb);
  }
  return out;
}

double luma(const Rgb& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

// Mean squared NN distance and mean squared luma error from a to its NN in b.
std::pair<double, double> one_way_errors(const PointCloud& a, const PointCloud& b) {
  const NearestNeighbors nn = nearest_neighbors(a.coords, b.coords);
  double geo = 0.0, y = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    geo += nn.sq_dist[i];
    const double dy = luma(a.colors[i]) - luma(b.colors[nn.index[i]]);
    y += dy * dy;
  }
  const double n = static_cast<double>(a.size());
  return {geo / n, y / n};
}

}  // namespace

PointCloud apply_distortion(const PointCloud& cloud, const DistortionSpec& spec) {
  cloud.validate();
  const double param = level_parameter(spec.kind, spec.level);
  std::mt19937_64 rng(spec.seed);
  PointCloud out;
  switch (spec.kind) {
    case DistortionKind::color_noise: out = add_color_noise(cloud, param, rng); break;
    case DistortionKind::geometry_gaussian: out = add_geometry_noise(cloud, param, rng); break;
    case DistortionKind::downsample: out = downsample(cloud, param, rng); break;
    case DistortionKind::octree_quantize: out = octree_quantize(cloud, static_cast<int>(param)); break;
  }
  out.normalization.reset();
  return out;
}

double geometry_rmse(const PointCloud& ref, const PointCloud& dist) {
  const double diag = bounding_box_diagonal(ref.coords);
  if (!(diag > 0.0)) throw Error(ErrorKind::DegenerateCloud, "reference has zero extent");
  const double mse = std::max(one_way_errors(ref, dist).first, one_way_errors(dist, ref).first);
  return std::sqrt(mse) / diag;
}

double luma_rmse(const PointCloud& ref, const PointCloud& dist) {
  return std::sqrt(std::max(one_way_errors(ref, dist).second, one_way_errors(dist, ref).second));
}

double pseudo_mos(const PointCloud& ref, const PointCloud& dist, const PseudoMosConstants& k) {
  const double raw = 10.0 - k.a * geometry_rmse(ref, dist) - k.b * luma_rmse(ref, dist) / 255.0;
  return std::clamp(raw, 1.0, 10.0);
}

// ---------------------------------------------------------------------------
// Reference shapes

namespace {

Vec3 shape_point(std::size_t shape, double u, double v) {
  constexpr double pi = std::numbers::pi;
  switch (shape % 6) {
    case 0: {  // sphere
      const double th = 2 * pi * u, ph = std::acos(1 - 2 * v);
      return {std::sin(ph) * std::cos(th), std::sin(ph) * std::sin(th), std::cos(ph)};
    }
    case 1: {  // torus
      const double th = 2 * pi * u, ph = 2 * pi * v;
      const double r = 1.0 + 0.35 * std::cos(ph);
      return {r * std::cos(th), r * std::sin(th), 0.35 * std::sin(ph)};
    }
    case 2: {  // box surface
      const int face = std::min(5, static_cast<int>(u * 6));
      const double s = u * 6 - face, t = v;
      const double a = 2 * s - 1, b = 2 * t - 1;
      switch (face) {
        case 0: return {1, a, b * 0.7};
        case 1: return {-1, a, b * 0.7};
        case 2: return {a, 1, b * 0.7};
        case 3: return {a, -1, b * 0.7};
        case 4: return {a, b, 0.7};
        default: return {a, b, -0.7};
      }
    }
    case 3: {  // capped cylinder
      const double th = 2 * pi * u;
      if (v < 0.7) return {std::cos(th), std::sin(th), (v / 0.7) * 2 - 1};
      const double r = std::sqrt((v - 0.7) / 0.3);
      const double z = (static_cast<int>(u * 1000) % 2 == 0) ? 1.0 : -1.0;
      return {r * std::cos(th), r * std::sin(th), z};
    }
    case 4: {  // saddle
      const double x = 2 * u - 1, y = 2 * v - 1;
      return {x, y, 0.5 * (x * x - y * y)};
    }
    default: {  // bumpy sphere
      const double th = 2 * pi * u, ph = std::acos(1 - 2 * v);
      const double r = 1.0 + 0.15 * std::sin(5 * th) * std::sin(4 * ph);
      return {r * std::sin(ph) * std::cos(th), r * std::sin(ph) * std::sin(th), r * std::cos(ph)};
    }
  }
}

}  // namespace

std::vector<PointCloud> make_reference_clouds(std::size_t count, std::size_t points,
                                              std::uint64_t seed) {
  static const char* names[] = {"sphere", "torus", "box", "cylinder", "saddle", "bumpy"};
  std::vector<PointCloud> refs;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (std::size_t r = 0; r < count; ++r) {
    PointCloud cloud;
    std::ostringstream name;
    name << names[r % 6] << r;
    cloud.name = name.str();
    const double scale = 50.0 + 100.0 * uniform(rng);
    Rgb base{}, accent{};
    for (int c = 0; c < 3; ++c) {
      base[c] = static_cast<std::uint8_t>(40 + 170 * uniform(rng));
      accent[c] = static_cast<std::uint8_t>(40 + 170 * uniform(rng));
    }
    const double freq = 2.0 + 4.0 * uniform(rng);
    const int pattern = static_cast<int>(r % 4);
    cloud.coords.reserve(points);
    cloud.colors.reserve(points);
    for (std::size_t i = 0; i < points; ++i) {
      const Vec3 p = shape_point(r, uniform(rng), uniform(rng));
      double t = 0.0;
      switch (pattern) {
        case 0: t = 0.5 + 0.5 * std::sin(freq * 3.0 * p[2]); break;                       // stripes
        case 1: t = (std::sin(freq * p[0]) * std::sin(freq * p[1]) > 0) ? 1.0 : 0.0; break;  // checker
        case 2: t = 0.5 + 0.5 * p[0] / 1.4; break;                                          // gradient
        default: t = 0.5 + 0.5 * std::cos(freq * (p[0] + p[1] + p[2])); break;               // waves
      }
      t = std::clamp(t, 0.0, 1.0);
      Rgb rgb{};
      for (int c = 0; c < 3; ++c) rgb[c] = clamp_color((1 - t) * base[c] + t * accent[c]);
      cloud.coords.push_back({p[0] * scale, p[1] * scale, p[2] * scale});
      cloud.colors.push_back(rgb);
    }
    refs.push_back(std::move(cloud));
  }
  return refs;
}

// ---------------------------------------------------------------------------
// Corpus synthesis

std::string distorted_file_name(std::string_view reference, const DistortionSpec& spec) {
  std::ostringstream name;
  name << reference << "__" << to_string(spec.kind) << "_L" << spec.level << "_s" << spec.seed << ".ply";
  return name.str();
}

std::string reference_of(std::string_view path) {
  const auto slash = path.find_last_of('/');
  const std::string_view file = slash == std::string_view::npos ? path : path.substr(slash + 1);
  const auto sep = file.find("__");
  return std::string(sep == std::string_view::npos ? file : file.substr(0, sep));
}

DatasetManifest synthesize_corpus(const std::vector<PointCloud>& refs, const CorpusOptions& options,
                                  const std::filesystem::path& out_dir) {
  if (refs.empty()) throw Error(ErrorKind::InvalidArgument, "no reference clouds");
  std::set<std::string> names;
  for (const auto& r : refs) {
    if (r.name.empty() || r.name.find("__") != std::string::npos || !names.insert(r.name).second) {
      throw Error(ErrorKind::InvalidArgument, "reference names must be unique, non-empty, and free of '__'");
    }
  }
  std::filesystem::create_directories(out_dir);

  // Whole references go to one split so no object is seen in both.
  std::vector<std::string> order(names.begin(), names.end());
  std::mt19937_64 split_rng(options.split_seed);
  std::shuffle(order.begin(), order.end(), split_rng);
  std::size_t n_test = static_cast<std::size_t>(std::llround(options.test_fraction * static_cast<double>(order.size())));
  if (order.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, order.size() - 1);
  const std::set<std::string> test_refs(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));

  DatasetManifest manifest;
  manifest.mos_lo = 1.0;
  manifest.mos_hi = 10.0;
  manifest.base_dir = out_dir;
  auto fmt = [](double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
  };
  manifest.notes.emplace_back("pseudo_mos_a", fmt(options.constants.a));
  manifest.notes.emplace_back("pseudo_mos_b", fmt(options.constants.b));

  std::ostringstream sidecar;
  sidecar << "# pseudo_mos = clamp(10 - a*geometry_rmse - b*luma_rmse/255, 1, 10)\n"
          << "a=" << fmt(options.constants.a) << "\n"
          << "b=" << fmt(options.constants.b) << "\n"
          << "split_seed=" << options.split_seed << "\n"
          << "path,reference,kind,level,seed,parameter,points,geometry_rmse,luma_rmse,pseudo_mos\n";

  for (const PointCloud& ref : refs) {
    const Split split = test_refs.count(ref.name) ? Split::test : Split::train;
    for (DistortionKind kind : options.kinds) {
      for (int level : options.levels) {
        for (std::uint64_t seed : options.seeds) {
          const DistortionSpec spec{kind, level, seed};
          PointCloud dist = apply_distortion(ref, spec);
          const std::string file = distorted_file_name(ref.name, spec);
          dist.name = file.substr(0, file.size() - 4);
          save_ply(dist, out_dir / file);
          // Score what a reader of the file sees (float32 coordinates).
          const PointCloud stored = load_ply(out_dir / file);
          const double geo = geometry_rmse(ref, stored);
          const double y = luma_rmse(ref, stored);
          const double mos = pseudo_mos(ref, stored, options.constants);
          manifest.entries.push_back({file, mos, split, options.source});
          sidecar << file << "," << ref.name << "," << to_string(kind) << "," << level << "," << seed
                  << "," << fmt(level_parameter(kind, level)) << "," << stored.size() << ","
                  << fmt(geo) << "," << fmt(y) << "," << fmt(mos) << "\n";
        }
      }
    }
  }
  save_manifest(manifest, out_dir / "manifest.csv");
  std::ofstream side(out_dir / "distortions.txt", std::ios::binary | std::ios::trunc);
  if (!side) throw Error(ErrorKind::Io, "cannot write distortions.txt");
  side << sidecar.str();
  return manifest;
}

}  // namespace pcqa
