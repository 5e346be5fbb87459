#include <algorithm>
#include <cmath>
#include <map>

#include "pcqa/error.hpp"
#include "pcqa/trainer.hpp"

namespace pcqa {

std::string to_string(QualityLevel level) {
  switch (level) {
    case QualityLevel::bad: return "bad";
    case QualityLevel::fair: return "fair";
    case QualityLevel::excellent: return "excellent";
  }
  return "bad";
}

std::array<double, 2> level_thresholds(std::vector<double> mos) {
  std::sort(mos.begin(), mos.end());
  std::vector<double> unique_values = mos;
  unique_values.erase(std::unique(unique_values.begin(), unique_values.end()), unique_values.end());
  if (mos.size() < 3 || unique_values.size() < 3) {
    throw Error(ErrorKind::TooFewEntries, "quality levels need at least 3 distinct MOS values (got " +
                                              std::to_string(unique_values.size()) + ")");
  }
  const double n = static_cast<double>(mos.size());
  const auto r1 = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(n / 3.0)));
  const auto r2 = std::max<std::size_t>(r1, static_cast<std::size_t>(std::lround(2.0 * n / 3.0)));
  return {mos[r1 - 1], mos[r2 - 1]};
}

QualityLevel level_of(double mos, const std::array<double, 2>& thresholds) {
  if (mos <= thresholds[0]) return QualityLevel::bad;
  if (mos <= thresholds[1]) return QualityLevel::fair;
  return QualityLevel::excellent;
}

std::vector<QualityLevel> assign_levels(const DatasetManifest& manifest) {
  std::map<std::string, std::vector<double>> by_source;
  for (const auto& e : manifest.entries) by_source[e.source].push_back(e.mos);
  std::map<std::string, std::array<double, 2>> thresholds;
  for (auto& [source, values] : by_source) {
    try {
      thresholds[source] = level_thresholds(values);
    } catch (const Error& e) {
      throw Error(ErrorKind::TooFewEntries, "source '" + source + "': " + e.what());
    }
  }
  std::vector<QualityLevel> levels;
  levels.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) levels.push_back(level_of(e.mos, thresholds[e.source]));
  return levels;
}

double cross_entropy(std::span<const double> logits, int label, std::vector<double>* grad) {
  if (logits.empty() || label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw Error(ErrorKind::InvalidArgument, "cross_entropy label out of range");
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - top);
  const double log_sum = top + std::log(sum);
  if (grad != nullptr) {
    grad->resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) (*grad)[i] = std::exp(logits[i] - log_sum);
    (*grad)[static_cast<std::size_t>(label)] -= 1.0;
  }
  return log_sum - logits[static_cast<std::size_t>(label)];
}

namespace {

struct Centered {
  std::vector<double> xc, yc;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
};

Centered center(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::ShapeMismatch, "correlation inputs differ in length");
  if (x.size() < 2) throw Error(ErrorKind::InvalidArgument, "correlation needs at least 2 values");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  Centered c;
  c.xc.resize(x.size());
  c.yc.resize(y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    c.xc[i] = x[i] - mx;
    c.yc[i] = y[i] - my;
    c.sxx += c.xc[i] * c.xc[i];
    c.syy += c.yc[i] * c.yc[i];
    c.sxy += c.xc[i] * c.yc[i];
  }
  return c;
}

}  // namespace

double plcc(std::span<const double> x, std::span<const double> y) {
  const Centered c = center(x, y);
  if (c.sxx == 0.0 || c.syy == 0.0) throw Error(ErrorKind::ConstantVector, "plcc of a constant vector");
  return std::clamp(c.sxy / std::sqrt(c.sxx * c.syy), -1.0, 1.0);
}

PlccLoss plcc_loss(std::span<const double> pred, std::span<const double> target) {
  const Centered c = center(pred, target);
  PlccLoss out;
  out.grad.assign(pred.size(), 0.0);
  if (c.sxx == 0.0 || c.syy == 0.0) {
    out.degenerate = true;
    return out;
  }
  const double norm = std::sqrt(c.sxx * c.syy);
  const double p = c.sxy / norm;
  out.loss = (1.0 - p) * (1.0 - p);
  const double outer = -2.0 * (1.0 - p);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    out.grad[i] = outer * (c.yc[i] / norm - p * c.xc[i] / c.sxx);
  }
  return out;
}

}  // namespace pcqa
