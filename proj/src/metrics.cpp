#include "pcqa/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "pcqa/error.hpp"
#include "pcqa/geometry.hpp"

namespace pcqa {

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = rank;
    i = j + 1;
  }
  return ranks;
}

namespace {

bool has_ties(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  return std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
}

bool is_constant(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [&](double v) { return v == values[0]; });
}

}  // namespace

double srocc(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::ShapeMismatch, "srocc inputs differ in length");
  if (x.size() < 2) throw Error(ErrorKind::InvalidArgument, "srocc needs at least 2 values");
  if (is_constant(x) || is_constant(y)) throw Error(ErrorKind::ConstantVector, "srocc of a constant vector");
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  if (has_ties(x) || has_ties(y)) return plcc(rx, ry);
  const double n = static_cast<double>(x.size());
  double d2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

// ---------------------------------------------------------------------------

double vqeg_logistic(const std::array<double, 4>& b, double objective) {
  // 1/(1+exp(t)) written as sigmoid(-t) so large |t| stays finite.
  return b[0] * (0.5 - nn::sigmoid(-b[1] * (objective - b[2]))) + b[3];
}

LogisticFit vqeg_logistic_fit(std::span<const double> objective, std::span<const double> mos) {
  if (objective.size() != mos.size()) throw Error(ErrorKind::ShapeMismatch, "fit inputs differ in length");
  if (objective.size() < 5) throw Error(ErrorKind::TooFewEntries, "logistic fit needs >= 5 points");
  if (is_constant(mos) || is_constant(objective)) {
    throw Error(ErrorKind::ConstantVector, "logistic fit needs non-constant inputs");
  }
  const std::size_t n = objective.size();
  const double dn = static_cast<double>(n);
  const double mean_o = std::accumulate(objective.begin(), objective.end(), 0.0) / dn;
  double var_o = 0.0;
  for (double o : objective) var_o += (o - mean_o) * (o - mean_o);
  const auto [mos_min, mos_max] = std::minmax_element(mos.begin(), mos.end());

  LogisticFit fit;
  fit.initial = {*mos_max - *mos_min, 1.0 / std::sqrt(var_o / dn), mean_o,
                 std::accumulate(mos.begin(), mos.end(), 0.0) / dn};

  auto sse_of = [&](const std::array<double, 4>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = mos[i] - vqeg_logistic(b, objective[i]);
      s += r * r;
    }
    return s;
  };

  std::array<double, 4> b = fit.initial;
  double sse = sse_of(b);
  const double initial_sse = sse;
  double lambda = 1e-3;
  constexpr std::size_t kMaxIterations = 500;
  bool converged = false;
  Eigen::MatrixXd jac(n, 4);
  Eigen::VectorXd res(n);
  std::size_t it = 0;
  for (; it < kMaxIterations && !converged; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      const double d = objective[i] - b[2];
      const double l = nn::sigmoid(-b[1] * d);  // 1/(1+exp(b2 d))
      const double slope = b[0] * l * (1.0 - l);
      jac(static_cast<Eigen::Index>(i), 0) = 0.5 - l;
      jac(static_cast<Eigen::Index>(i), 1) = slope * d;
      jac(static_cast<Eigen::Index>(i), 2) = -slope * b[1];
      jac(static_cast<Eigen::Index>(i), 3) = 1.0;
      res(static_cast<Eigen::Index>(i)) = mos[i] - vqeg_logistic(b, objective[i]);
    }
    const Eigen::Matrix4d jtj = jac.transpose() * jac;
    const Eigen::Vector4d jtr = jac.transpose() * res;
    bool accepted = false;
    while (lambda < 1e16) {
      Eigen::Matrix4d damped = jtj;
      for (int k = 0; k < 4; ++k) damped(k, k) += lambda * std::max(jtj(k, k), 1e-12);
      const Eigen::Vector4d step = damped.ldlt().solve(jtr);
      std::array<double, 4> trial = b;
      for (int k = 0; k < 4; ++k) trial[static_cast<std::size_t>(k)] += step(k);
      const double trial_sse = sse_of(trial);
      if (std::isfinite(trial_sse) && trial_sse < sse) {
        const double gain = sse - trial_sse;
        double step_norm = 0.0, b_norm = 0.0;
        for (int k = 0; k < 4; ++k) {
          step_norm += step(k) * step(k);
          b_norm += b[static_cast<std::size_t>(k)] * b[static_cast<std::size_t>(k)];
        }
        b = trial;
        sse = trial_sse;
        lambda = std::max(lambda * 0.1, 1e-15);
        accepted = true;
        if (gain <= 1e-15 * std::max(sse, 1e-300) || step_norm <= 1e-24 * (b_norm + 1e-24)) {
          converged = true;
        }
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) converged = true;  // no descent direction left
  }
  fit.iterations = it;
  fit.params = b;
  fit.sse = sse;
  const bool finite = std::all_of(b.begin(), b.end(), [](double v) { return std::isfinite(v); });
  fit.diverged = !finite || !std::isfinite(sse) || (!converged && !(sse < initial_sse));
  fit.mapped.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    fit.mapped[i] = fit.diverged ? objective[i] : vqeg_logistic(b, objective[i]);
  }
  return fit;
}

// ---------------------------------------------------------------------------

namespace {

double luma(const Rgb& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

struct DirectionMse {
  double geometry = 0.0;
  double luma = 0.0;
};

DirectionMse direction_mse(const PointCloud& from, const PointCloud& to) {
  const NearestNeighbors nn = nearest_neighbors(from.coords, to.coords);
  DirectionMse m;
  for (std::size_t i = 0; i < from.size(); ++i) {
    m.geometry += nn.sq_dist[i];
    const double dy = luma(from.colors[i]) - luma(to.colors[nn.index[i]]);
    m.luma += dy * dy;
  }
  m.geometry /= static_cast<double>(from.size());
  m.luma /= static_cast<double>(from.size());
  return m;
}

double psnr_db(double peak, double mse) {
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

}  // namespace

PsnrResult psnr_p2p(const PointCloud& ref, const PointCloud& dist, std::optional<double> geometry_peak) {
  ref.validate();
  dist.validate();
  const DirectionMse ab = direction_mse(ref, dist);
  const DirectionMse ba = direction_mse(dist, ref);
  double peak = 0.0;
  if (geometry_peak) {
    peak = *geometry_peak;
  } else {
    std::vector<Vec3> both = ref.coords;
    both.insert(both.end(), dist.coords.begin(), dist.coords.end());
    peak = bounding_box_diagonal(both);
  }
  return {psnr_db(peak, std::max(ab.geometry, ba.geometry)), psnr_db(255.0, std::max(ab.luma, ba.luma))};
}

// ---------------------------------------------------------------------------

ModelPredictor::ModelPredictor(LoadedModel model) : model_(std::move(model)) {}

Prediction ModelPredictor::predict(const std::filesystem::path& cloud_path) {
  const KeyClusterSet clusters = cached_key_clusters(cloud_path, model_.meta.kce);
  const PreparedSample sample = prepare_sample(clusters, model_.network.config());
  const nn::Matrix out = model_.network.forward({&sample}, false);
  Prediction p;
  const CheckpointMeta& m = model_.meta;
  if (model_.network.head() == HeadKind::classification) {
    int best = 0;
    for (int c = 1; c < 3; ++c) {
      if (out.data[static_cast<std::size_t>(c)] > out.data[static_cast<std::size_t>(best)]) best = c;
    }
    p.level = static_cast<QualityLevel>(best);
    p.mos = m.level_mean_mos[static_cast<std::size_t>(best)];
  } else {
    p.mos = m.mos_lo + out.data[0] * (m.mos_hi - m.mos_lo);
    p.level = level_of(p.mos, m.level_thresholds);
  }
  return p;
}

EvalReport summarize_items(std::vector<EvalItem> items) {
  std::sort(items.begin(), items.end(), [](const EvalItem& a, const EvalItem& b) {
    return a.name < b.name || (a.name == b.name && a.mos_true < b.mos_true);
  });
  EvalReport r;
  r.items = std::move(items);
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> truth, pred;
  double correct = 0.0;
  for (const auto& item : r.items) {
    truth.push_back(item.mos_true);
    pred.push_back(item.mos_pred);
    if (item.level_true == item.level_pred) correct += 1.0;
  }
  r.accuracy = r.items.empty() ? kNaN : correct / static_cast<double>(r.items.size());
  auto guarded = [&](auto&& f) {
    try {
      return f();
    } catch (const Error&) {
      return kNaN;
    }
  };
  r.plcc = guarded([&] { return plcc(pred, truth); });
  r.srocc = guarded([&] { return srocc(pred, truth); });
  r.mapped_plcc = r.plcc;
  if (r.items.size() >= 5 && !std::isnan(r.plcc)) {
    r.logistic = vqeg_logistic_fit(pred, truth);
    if (!r.logistic->diverged) r.mapped_plcc = guarded([&] { return plcc(r.logistic->mapped, truth); });
  }
  return r;
}

EvalReport evaluate(Predictor& predictor, const DatasetManifest& manifest, std::optional<Split> split) {
  manifest.validate(true);
  const std::vector<QualityLevel> levels = assign_levels(manifest);
  std::vector<EvalItem> items;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const ManifestEntry& e = manifest.entries[i];
    if (split && e.split != *split) continue;
    const std::filesystem::path path = manifest.resolve(e);
    const Prediction p = predictor.predict(path);
    items.push_back({path.stem().string(), e.mos, p.mos, levels[i], p.level});
  }
  if (items.empty()) throw Error(ErrorKind::EmptyResult, "no manifest entries to evaluate");
  return summarize_items(std::move(items));
}

std::string format_summary(const EvalReport& r) {
  std::ostringstream out;
  out << "items=" << r.items.size() << "\n"
      << "plcc=" << format_real(r.plcc) << "\n"
      << "srocc=" << format_real(r.srocc) << "\n"
      << "abs_plcc=" << format_real(std::abs(r.plcc)) << "\n"
      << "abs_srocc=" << format_real(std::abs(r.srocc)) << "\n"
      << "accuracy=" << format_real(r.accuracy) << "\n";
  if (r.logistic) {
    const auto& b = r.logistic->params;
    out << "logistic_b1=" << format_real(b[0]) << "\n"
        << "logistic_b2=" << format_real(b[1]) << "\n"
        << "logistic_b3=" << format_real(b[2]) << "\n"
        << "logistic_b4=" << format_real(b[3]) << "\n"
        << "logistic_diverged=" << (r.logistic->diverged ? 1 : 0) << "\n";
  }
  out << "mapped_plcc=" << format_real(r.mapped_plcc) << "\n";
  return out.str();
}

void write_report(const EvalReport& report, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto open = [](const std::filesystem::path& p) {
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + p.string());
    return out;
  };
  {
    auto out = open(out_dir / "items.csv");
    out << "name,mos_true,mos_pred,level_true,level_pred\n";
    for (const auto& item : report.items) {
      out << item.name << ',' << format_real(item.mos_true) << ',' << format_real(item.mos_pred)
          << ',' << to_string(item.level_true) << ',' << to_string(item.level_pred) << '\n';
    }
  }
  {
    auto out = open(out_dir / "summary.txt");
    out << format_summary(report);
  }
  {
    auto out = open(out_dir / "scatter.csv");
    out << "objective,mos";
    if (report.logistic) out << ",mapped";
    out << '\n';
    for (std::size_t i = 0; i < report.items.size(); ++i) {
      out << format_real(report.items[i].mos_pred) << ',' << format_real(report.items[i].mos_true);
      if (report.logistic) out << ',' << format_real(report.logistic->mapped[i]);
      out << '\n';
    }
  }
}

}  // namespace pcqa
