#pragma once

// Correlation metrics, the 4-parameter logistic mapping, a point-to-point
// PSNR baseline and the evaluation report.

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcqa/cloud_io.hpp"
#include "pcqa/network.hpp"
#include "pcqa/trainer.hpp"

namespace pcqa {

// 1-based ranks; tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

// Spearman correlation. Tie-free: 1 - 6 sum d^2 / (I (I^2 - 1)); with ties:
// Pearson correlation of the average ranks. ConstantVector when a side is
// constant, InvalidArgument when I < 2.
double srocc(std::span<const double> x, std::span<const double> y);

// s(o) = b1 (1/2 - 1/(1 + exp(b2 (o - b3)))) + b4
double vqeg_logistic(const std::array<double, 4>& b, double objective);

struct LogisticFit {
  std::array<double, 4> initial{};
  std::array<double, 4> params{};
  std::vector<double> mapped;  // logistic(objective); the raw objective when diverged
  double sse = 0.0;
  std::size_t iterations = 0;
  bool diverged = false;
};

// Levenberg-Marquardt least squares from b1 = MOS range, b2 = 1/std(objective),
// b3 = mean(objective), b4 = mean(MOS). Needs >= 5 points (TooFewEntries) and
// non-constant inputs (ConstantVector).
LogisticFit vqeg_logistic_fit(std::span<const double> objective, std::span<const double> mos);

inline constexpr double kPsnrCap = 999.0;

struct PsnrResult {
  double geometry_db = 0.0;
  double luma_db = 0.0;
};

// Symmetric point-to-point PSNR: per-direction nearest-neighbor MSE, the
// larger direction wins. Geometry peak defaults to the diagonal of the
// bounding box of both clouds; luma (BT.601) peak is 255. Zero error gives
// kPsnrCap.
PsnrResult psnr_p2p(const PointCloud& ref, const PointCloud& dist,
                    std::optional<double> geometry_peak = std::nullopt);

// ---------------------------------------------------------------------------

struct Prediction {
  double mos = 0.0;  // dataset scale
  QualityLevel level = QualityLevel::bad;
};

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual Prediction predict(const std::filesystem::path& cloud_path) = 0;
};

// Runs key-cluster extraction and the network of a checkpoint.
class ModelPredictor final : public Predictor {
 public:
  explicit ModelPredictor(LoadedModel model);
  Prediction predict(const std::filesystem::path& cloud_path) override;
  const CheckpointMeta& meta() const noexcept { return model_.meta; }

 private:
  LoadedModel model_;
};

struct EvalItem {
  std::string name;
  double mos_true = 0.0;
  double mos_pred = 0.0;
  QualityLevel level_true = QualityLevel::bad;
  QualityLevel level_pred = QualityLevel::bad;
};

struct EvalReport {
  std::vector<EvalItem> items;  // sorted by name
  double plcc = 0.0;            // NaN when undefined (constant predictions)
  double srocc = 0.0;
  double accuracy = 0.0;
  std::optional<LogisticFit> logistic;  // fitted when >= 5 items
  double mapped_plcc = 0.0;
};

// Aggregates recomputed from the rows (rows are sorted first).
EvalReport summarize_items(std::vector<EvalItem> items);

// Predicts every entry of `split` (all entries when empty). True levels come
// from assign_levels over the whole manifest.
EvalReport evaluate(Predictor& predictor, const DatasetManifest& manifest,
                    std::optional<Split> split = Split::test);

// items.csv, summary.txt (key=value) and scatter.csv under out_dir.
void write_report(const EvalReport& report, const std::filesystem::path& out_dir);
std::string format_summary(const EvalReport& report);

// Shortest round-trip decimal; "nan" for NaN.
std::string format_real(double v);

}  // namespace pcqa
