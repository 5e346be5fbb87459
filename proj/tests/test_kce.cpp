#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "pcqa/geometry.hpp"
#include "pcqa/kce.hpp"
#include "support.hpp"

using namespace pcqa;

namespace {

double d2(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// Dense reference: W, A = D^-1 W, h(A) X, row norms squared.
Eigen::VectorXd dense_scores(const PointCloud& pc, double tau, double sigma2,
                             const std::vector<double>& h) {
  const auto n = static_cast<Eigen::Index>(pc.size());
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double dist = std::sqrt(d2(pc.coords[i], pc.coords[j]));
      if (i != j && dist > 0.0 && dist < tau) w(i, j) = std::exp(-dist * dist / sigma2);
    }
  }
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double deg = w.row(i).sum();
    if (deg > 0.0) a.row(i) = w.row(i) / deg;
  }
  Eigen::MatrixXd x(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) x(i, c) = pc.coords[i][c];
  }
  Eigen::MatrixXd filtered = Eigen::MatrixXd::Zero(n, 3);
  Eigen::MatrixXd power = x;
  for (std::size_t l = 0; l < h.size(); ++l) {
    if (l > 0) power = a * power;
    filtered += h[l] * power;
  }
  return filtered.rowwise().squaredNorm();
}

PointCloud make_cloud(const std::vector<Vec3>& pts) {
  PointCloud pc;
  pc.coords = pts;
  pc.colors.assign(pts.size(), {10, 20, 30});
  pc.name = "hand";
  return pc;
}

}  // namespace

TEST_CASE("two-node graph closed forms") {
  const PointCloud pair = make_cloud({{0, 0, 0}, {0.3, 0.4, 0}});
  const GeometryGraph far = build_graph(pair, 0.5, 1.0);
  CHECK(far.edge_count() == 0);
  CHECK(far.degree == std::vector<double>{0.0, 0.0});

  const GeometryGraph near = build_graph(pair, 0.6, 0.2);
  REQUIRE(near.edge_count() == 2);
  CHECK(near.weight[0] == std::exp(-0.25 / 0.2));
  CHECK(near.weight[1] == near.weight[0]);
  CHECK(near.transition == std::vector<double>{1.0, 1.0});

  const FilterSpec diff{2, {1.0, -1.0}};
  const auto s = highpass_score(near, pair.coords, diff);
  CHECK(std::abs(s[0] - 0.25) < 1e-15);
  CHECK(std::abs(s[1] - 0.25) < 1e-15);

  const auto isolated = highpass_score(far, pair.coords, diff);
  CHECK(isolated[0] == 0.0);
  CHECK(std::abs(isolated[1] - 0.25) < 1e-15);
}

TEST_CASE("identity filter scores the squared norms") {
  const PointCloud pc = test::random_cloud(60, 4);
  const GeometryGraph g = build_graph(pc, 0.5, 0.1);
  const auto s = highpass_score(g, pc.coords, FilterSpec{4, {1.0, 0.0, 0.0, 0.0}});
  for (std::size_t i = 0; i < pc.size(); ++i) CHECK(s[i] == d2(pc.coords[i], {0, 0, 0}));

  CHECK(test::kind_of([&] { highpass_score(g, pc.coords, FilterSpec{3, {1.0, -1.0}}); }) ==
        ErrorKind::FilterLengthMismatch);
}

TEST_CASE("transition rows sum to one or zero") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const PointCloud pc = test::random_cloud(20, seed);
    const GeometryGraph g = build_graph(pc, 0.4 + 0.1 * static_cast<double>(seed), 0.2);
    for (std::size_t i = 0; i < g.size(); ++i) {
      double row = 0.0;
      for (std::size_t e = g.row_begin[i]; e < g.row_begin[i + 1]; ++e) row += g.transition[e];
      if (g.row_begin[i] == g.row_begin[i + 1]) {
        CHECK(row == 0.0);
      } else {
        CHECK(std::abs(row - 1.0) < 1e-12);
      }
    }
  }
}

TEST_CASE("graph is symmetric and edges obey the threshold") {
  const PointCloud pc = test::random_cloud(150, 8);
  const GeometryGraph g = build_graph(pc, 0.35, 0.05);
  std::map<std::pair<std::uint32_t, std::uint32_t>, double> edges;
  for (std::uint32_t i = 0; i < g.size(); ++i) {
    for (std::size_t e = g.row_begin[i]; e < g.row_begin[i + 1]; ++e) {
      edges[{i, g.col[e]}] = g.weight[e];
      CHECK(std::sqrt(d2(pc.coords[i], pc.coords[g.col[e]])) < 0.35);
    }
  }
  std::size_t expected = 0;
  for (std::uint32_t i = 0; i < pc.size(); ++i) {
    for (std::uint32_t j = 0; j < pc.size(); ++j) {
      const double dist = std::sqrt(d2(pc.coords[i], pc.coords[j]));
      if (i != j && dist > 0.0 && dist < 0.35) ++expected;
    }
  }
  CHECK(edges.size() == expected);
  for (const auto& [ij, w] : edges) CHECK(edges.at({ij.second, ij.first}) == w);
}

TEST_CASE("sparse filtering equals the dense matrix computation") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::uint64_t t = 0; t < 100; ++t) {
    const std::size_t n = 5 + (t * 29) % 296;
    const PointCloud pc = normalize_cloud(test::random_cloud(n, 7000 + t));
    const double tau = default_tau(pc, 3.0);
    const double sigma2 = default_sigma2(pc, tau);
    std::vector<double> h{1.0, -1.0, 0.0, 0.0};
    if (t % 2) h = {u(rng), u(rng), u(rng), u(rng)};
    const GeometryGraph g = build_graph(pc, tau, sigma2);
    const auto sparse = highpass_score(g, pc.coords, FilterSpec{4, h});
    const Eigen::VectorXd dense = dense_scores(pc, tau, sigma2, h);
    for (std::size_t i = 0; i < n; ++i) {
      REQUIRE(std::abs(sparse[i] - dense(static_cast<Eigen::Index>(i))) <= 1e-9);
    }
  }
}

TEST_CASE("key points are the top scores of the dense oracle") {
  for (std::uint64_t t = 0; t < 10; ++t) {
    const PointCloud pc = normalize_cloud(test::random_cloud(100, 50 + t));
    KceConfig cfg;
    const double tau = default_tau(pc, cfg.tau_factor);
    const double sigma2 = default_sigma2(pc, tau);
    const auto keys = extract_key_points(pc, 10, cfg);
    const Eigen::VectorXd dense = dense_scores(pc, tau, sigma2, cfg.filter.coefficients);
    std::vector<std::uint32_t> order(pc.size());
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return dense(a) > dense(b); });
    order.resize(10);
    CHECK(keys.indices == order);
    for (std::size_t i = 0; i < 10; ++i) CHECK(std::abs(keys.scores[i] - dense(order[i])) < 1e-9);
  }
}

TEST_CASE("beta equal to N returns every index by score") {
  const PointCloud pc = normalize_cloud(test::random_cloud(40, 2));
  const auto keys = extract_key_points(pc, 40, KceConfig{});
  std::set<std::uint32_t> distinct(keys.indices.begin(), keys.indices.end());
  CHECK(distinct.size() == 40);
  CHECK(std::is_sorted(keys.scores.rbegin(), keys.scores.rend()));
  CHECK(test::kind_of([&] { extract_key_points(pc, 41, KceConfig{}); }) == ErrorKind::CloudTooSmall);
}

TEST_CASE("default sizes on a 2048-point cloud") {
  const PointCloud pc = test::random_cloud(2048, 77);
  const KeyClusterSet set = extract_key_clusters(pc, KceConfig{});
  CHECK(set.beta == 1024);
  CHECK(set.k == 16);
  CHECK(set.clusters.size() == 1024 * 16 * 6);
  const KeyPoints keys = extract_key_points(normalize_cloud(pc), 1024, KceConfig{});
  CHECK(std::set<std::uint32_t>(keys.indices.begin(), keys.indices.end()).size() == 1024);
}

TEST_CASE("clusters hold the k nearest neighbours of each key point") {
  for (std::uint64_t t = 0; t < 8; ++t) {
    const PointCloud raw = test::random_cloud(300, 90 + t, 3.0);
    KceConfig cfg;
    cfg.beta = 20;
    cfg.k = 1 + t * 3;
    const KeyClusterSet set = extract_key_clusters(raw, cfg);
    set.validate();
    const PointCloud pc = normalize_cloud(raw);
    const Points3 pts(pc.coords);
    for (std::size_t c = 0; c < set.beta; ++c) {
      const double* first = set.member(c, 0);
      CHECK(first[0] == 0.0);
      CHECK(first[1] == 0.0);
      CHECK(first[2] == 0.0);
      const auto nb = knn(pts, set.centers[c], cfg.k);
      double max_norm = 0.0;
      std::multiset<double> got, want;
      for (std::size_t m = 0; m < cfg.k; ++m) {
        const double* row = set.member(c, m);
        const double norm = std::sqrt(row[0] * row[0] + row[1] * row[1] + row[2] * row[2]);
        max_norm = std::max(max_norm, norm);
        for (int ch = 0; ch < 3; ++ch) CHECK((row[3 + ch] >= 0.0 && row[3 + ch] <= 1.0));
        got.insert(norm);
        want.insert(std::sqrt(d2(pc.coords[nb.members[m]], set.centers[c])));
      }
      CHECK(std::abs(max_norm - nb.radius_used) < 1e-9);
      auto g = got.begin();
      for (double w : want) CHECK(std::abs(*g++ - w) < 1e-9);
      CHECK(set.radii[c] >= nb.radius_used);
    }
    for (double s : set.key_scores) CHECK(s >= 0.0);
  }
}

TEST_CASE("single-member clusters are the key points") {
  KceConfig cfg;
  cfg.beta = 5;
  cfg.k = 1;
  const KeyClusterSet set = extract_key_clusters(test::random_cloud(50, 1), cfg);
  for (std::size_t c = 0; c < 5; ++c) {
    for (int a = 0; a < 3; ++a) CHECK(set.member(c, 0)[a] == 0.0);
  }
}

TEST_CASE("translation leaves key scores unchanged") {
  for (std::uint64_t t = 0; t < 5; ++t) {
    PointCloud pc = test::random_cloud(400, 300 + t);
    KceConfig cfg;
    cfg.beta = 64;
    cfg.k = 4;
    const KeyClusterSet a = extract_key_clusters(pc, cfg);
    for (auto& p : pc.coords) {
      p[0] += 12.5;
      p[1] -= 3.0;
      p[2] += 0.25;
    }
    const KeyClusterSet b = extract_key_clusters(pc, cfg);
    for (std::size_t i = 0; i < cfg.beta; ++i) CHECK(std::abs(a.key_scores[i] - b.key_scores[i]) < 1e-9);
  }
}

TEST_CASE("permuting points only relabels the key point set") {
  for (std::uint64_t t = 0; t < 5; ++t) {
    const PointCloud pc = test::random_cloud(300, 600 + t);
    std::vector<std::uint32_t> perm(pc.size());
    std::iota(perm.begin(), perm.end(), 0u);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(t));
    PointCloud shuffled = pc;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      shuffled.coords[i] = pc.coords[perm[i]];
      shuffled.colors[i] = pc.colors[perm[i]];
    }
    KceConfig cfg;
    const auto a = extract_key_points(normalize_cloud(pc), 50, cfg);
    const auto b = extract_key_points(normalize_cloud(shuffled), 50, cfg);
    std::set<std::uint32_t> original(a.indices.begin(), a.indices.end()), relabeled;
    for (auto i : b.indices) relabeled.insert(perm[i]);
    CHECK(original == relabeled);
  }
}

TEST_CASE("serialization round trip and quantization") {
  KceConfig cfg;
  cfg.beta = 32;
  cfg.k = 8;
  const KeyClusterSet set = extract_key_clusters(test::random_cloud(200, 5), cfg);
  const KeyClusterSet q = quantize_to_float(set);
  for (double v : q.clusters) REQUIRE(test::is_float(v));
  for (const auto& c : q.centers) {
    for (double v : c) REQUIRE(test::is_float(v));
  }
  for (double v : q.key_scores) REQUIRE(test::is_float(v));

  const auto dir = test::scratch_dir("kcs");
  write_key_clusters(set, dir / "a.kcs");
  const KeyClusterSet back = read_key_clusters(dir / "a.kcs");
  CHECK(back.beta == 32);
  CHECK(back.k == 8);
  CHECK(back.clusters == q.clusters);
  CHECK(back.centers == q.centers);
  CHECK(back.key_scores == q.key_scores);
  CHECK(serialize_key_clusters(back) == serialize_key_clusters(set));

  std::string bytes = serialize_key_clusters(set);
  CHECK(test::kind_of([&] { deserialize_key_clusters(bytes.substr(0, bytes.size() - 1)); }) ==
        ErrorKind::TruncatedBody);
  bytes[0] = 'X';
  CHECK(test::kind_of([&] { deserialize_key_clusters(bytes); }) == ErrorKind::MalformedHeader);
}

TEST_CASE("config keys identify configurations") {
  KceConfig a, b;
  CHECK(config_key(a) == config_key(b));
  b.beta = 512;
  CHECK(config_key(a) != config_key(b));
  b = a;
  b.tau = 0.1;
  CHECK(config_key(a) != config_key(b));
}

TEST_CASE("clouds smaller than beta are rejected") {
  KceConfig cfg;
  cfg.beta = 64;
  CHECK(test::kind_of([&] { extract_key_clusters(test::random_cloud(63, 1), cfg); }) ==
        ErrorKind::CloudTooSmall);
  cfg.k = 100;
  CHECK(test::kind_of([&] { extract_key_clusters(test::random_cloud(80, 1), cfg); }) ==
        ErrorKind::KTooLarge);
}
