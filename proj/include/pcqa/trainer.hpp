#pragma once

// Quality levels, training losses and the two-stage training procedure:
// a three-level classifier first, then a MOS regressor whose trunk starts
// from the classifier.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcqa/cloud_io.hpp"
#include "pcqa/kce.hpp"
#include "pcqa/network.hpp"

namespace pcqa {

enum class QualityLevel : int { bad = 0, fair = 1, excellent = 2 };

std::string to_string(QualityLevel level);

// Upper MOS bounds of "bad" and "fair" from tertiles of the values; a value
// equal to a bound takes the lower level. Needs >= 3 values with >= 3
// distinct, else TooFewEntries.
std::array<double, 2> level_thresholds(std::vector<double> mos);
QualityLevel level_of(double mos, const std::array<double, 2>& thresholds);

// Tertile levels computed separately for each source tag, in entry order.
std::vector<QualityLevel> assign_levels(const DatasetManifest& manifest);

// -log softmax(logits)[label]; fills d/dlogits when grad is given.
double cross_entropy(std::span<const double> logits, int label,
                     std::vector<double>* grad = nullptr);

// Pearson correlation. k >= 2 and both sides non-constant, else ConstantVector.
double plcc(std::span<const double> x, std::span<const double> y);

struct PlccLoss {
  double loss = 4.0;
  std::vector<double> grad;  // d loss / d pred
  bool degenerate = false;   // constant targets or predictions: loss 4, zero gradient
};

// (1 - plcc(pred, target))^2.
PlccLoss plcc_loss(std::span<const double> pred, std::span<const double> target);

// ---------------------------------------------------------------------------

struct TrainConfig {
  std::size_t train_batch = 16;
  std::size_t test_batch = 32;
  std::size_t epochs = 200;
  double cls_lr = 1e-3;
  std::size_t cls_step = 20;
  double reg_lr = 1e-4;
  std::size_t reg_step = 30;
  double lr_factor = 0.7;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  bool freeze_trunk = false;
  KceConfig kce;
  NetworkConfig network = NetworkConfig::for_head(HeadKind::classification);

  // Throws InvalidConfig.
  void validate() const;
};

// lr0 * factor^floor(epoch / step).
double step_lr(double lr0, std::size_t step, double factor, std::size_t epoch);

// Independent stream seeds derived from one user seed.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& component);

class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

  // Updates every trainable tensor whose name does not start with `skip_prefix`.
  void step(nn::ParameterStore& store, double lr, const std::string& skip_prefix = {});

 private:
  double beta1_, beta2_, epsilon_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Key clusters of one cloud file, rounded to float32. With PKT_PCQA_CACHE set
// the result is read from or written to that directory, keyed by file content
// and config.
KeyClusterSet cached_key_clusters(const std::filesystem::path& cloud_path, const KceConfig& config);

struct TrainingItem {
  std::string name;
  KeyClusterSet clusters;
  double mos = 0.0;
  double target = 0.0;  // MOS mapped to [0,1] by the manifest scale
  QualityLevel level = QualityLevel::bad;
  Split split = Split::train;
};

struct TrainingSet {
  std::vector<TrainingItem> items;
  double mos_lo = 1.0;
  double mos_hi = 10.0;
  std::array<double, 2> thresholds{};       // pooled over the whole manifest
  std::array<double, 3> level_mean_mos{};   // over the training split
  KceConfig kce;
};

TrainingSet build_training_set(const DatasetManifest& manifest, const KceConfig& kce);

struct EpochLog {
  std::size_t epoch = 0;
  std::string split;  // train | val
  double loss = 0.0;
  double acc_or_plcc = 0.0;
  std::optional<double> srocc;  // prediction only
  double lr = 0.0;
};

struct TrainResult {
  Network network;  // parameters of the best validation epoch
  CheckpointMeta meta;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  std::size_t degenerate_batches = 0;
};

TrainResult train_classification(const TrainingSet& data, const TrainConfig& config);

// `init` supplies the trunk; nullptr trains from random initialization.
// ConfigMismatch when the init trunk does not fit config.network.
TrainResult train_prediction(const TrainingSet& data, const Network* init,
                             const TrainConfig& config);

// Evaluation-mode outputs (B x outputs) in batches of `batch`.
nn::Matrix run_inference(Network& network, const std::vector<const PreparedSample*>& samples,
                         std::size_t batch);

// epoch,split,loss,acc_or_plcc,srocc,lr
void write_training_log(const std::vector<EpochLog>& log, const std::filesystem::path& path);

}  // namespace pcqa
