#pragma once

// The quality network: a shared pointwise feature stage over key clusters,
// two grouped attention stages, and a classification or MOS head.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pcqa/kce.hpp"
#include "pcqa/nn.hpp"

namespace pcqa {

using nn::AttentionKind;

// Where attention blocks sit inside the grouped stages.
//   a: after the final conv + batch norm of both stages, before ReLU
//   b: after the final ReLU of both stages
//   c: as a, first grouped stage only
//   d: as a, second grouped stage only
//   e: after the batch norm of the last two convs of both stages
enum class Placement { a, b, c, d, e };

enum class HeadKind { classification, prediction };

std::string to_string(AttentionKind kind);
std::string to_string(Placement placement);
std::string to_string(HeadKind head);
AttentionKind parse_attention(const std::string& text);  // none|cse|sse|scse
Placement parse_placement(const std::string& text);      // a..e
HeadKind parse_head(const std::string& text);            // cls|classification|reg|prediction

struct GroupingSpec {
  std::size_t n_centroids = 0;
  std::size_t k_group = 0;
  double radius = 0.0;

  bool operator==(const GroupingSpec&) const = default;
};

struct NetworkConfig {
  std::vector<std::size_t> fe_channels{64, 64, 128};
  std::vector<std::size_t> afe1_channels{128, 128, 256};
  std::vector<std::size_t> afe2_channels{256, 512, 1024};
  GroupingSpec afe1{512, 32, 0.4};
  GroupingSpec afe2{128, 64, 0.4};
  AttentionKind attention = AttentionKind::scse;
  Placement placement = Placement::a;
  bool fe_attention = false;
  std::vector<std::size_t> head_widths{512, 256};
  double dropout = 0.4;

  static constexpr double kClassificationRadius = 0.4;
  static constexpr double kPredictionRadius = 0.35;

  // Defaults with the grouping radius of the given task.
  static NetworkConfig for_head(HeadKind head);

  void set_radius(double r) { afe1.radius = afe2.radius = r; }

  // Throws InvalidConfig.
  void validate() const;

  bool operator==(const NetworkConfig&) const = default;
};

// Trunk tensors can be shared when every shape-bearing field agrees. Radii and
// centroid counts change groupings, not shapes, and are ignored.
bool trunk_compatible(const NetworkConfig& a, const NetworkConfig& b);

std::string config_to_json(const NetworkConfig& config);
NetworkConfig config_from_json(const std::string& text);

// Precomputed grouping of one point set: centroid c owns rows
// [c*k_group, (c+1)*k_group) of members/local.
struct Grouping {
  std::vector<std::uint32_t> centroid_index;
  std::vector<Vec3> centroids;
  std::vector<std::uint32_t> members;
  std::vector<double> local;  // (n_centroids * k_group) x 3, member minus centroid
};

// FPS from index 0, then ball query around each centroid.
Grouping group_points(const std::vector<Vec3>& positions, const GroupingSpec& spec);

// Network input of one cloud with both groupings resolved.
struct PreparedSample {
  std::size_t beta = 0;
  std::size_t k = 0;
  nn::Matrix input;  // (beta*k) x 6
  std::vector<Vec3> key_positions;
  Grouping afe1, afe2;
};

PreparedSample prepare_sample(const KeyClusterSet& clusters, const NetworkConfig& config);

struct FeatureMap {
  std::vector<Vec3> positions;
  nn::Matrix features;  // positions.size() x C
  std::string stage;
};

class Network {
 public:
  Network(const NetworkConfig& config, HeadKind head, std::uint64_t seed);
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;
  ~Network();

  const NetworkConfig& config() const noexcept { return config_; }
  HeadKind head() const noexcept { return head_; }
  std::size_t outputs() const noexcept { return head_ == HeadKind::classification ? 3 : 1; }

  nn::ParameterStore& parameters() { return *store_; }
  const nn::ParameterStore& parameters() const { return *store_; }

  // B x outputs: logits, or sigmoid outputs in [0,1] for prediction. `rng`
  // drives dropout and may be null outside training.
  nn::Matrix forward(const std::vector<const PreparedSample*>& batch, bool train,
                     std::mt19937_64* rng = nullptr);
  // Gradient of the loss w.r.t. the forward output; accumulates into the store.
  void backward(const nn::Matrix& d_output);

  // Single-cloud inference pieces (evaluation mode).
  FeatureMap fe_forward(const KeyClusterSet& clusters);
  FeatureMap afe_forward(const FeatureMap& input, int stage);  // stage 1 or 2
  std::array<double, 3> classify(const FeatureMap& final_map);
  double predict_mos(const FeatureMap& final_map);

  // Copies every trunk/* tensor (parameters and running statistics).
  void transplant_trunk(const Network& source);

 private:
  struct Stack;
  struct Impl;

  NetworkConfig config_;
  HeadKind head_;
  std::unique_ptr<nn::ParameterStore> store_;
  std::unique_ptr<Impl> impl_;
};

// ---------------------------------------------------------------------------
// Checkpoints: "PCQACKPT", u32 version, u64 header length, JSON header
// (config, head, metadata, tensor names and shapes), then float64 values in
// header order, little endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string stage;  // classification | prediction
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  double mos_lo = 1.0;
  double mos_hi = 10.0;
  std::array<double, 2> level_thresholds{0.0, 0.0};  // dataset MOS scale, tie goes lower
  std::array<double, 3> level_mean_mos{0.0, 0.0, 0.0};
  KceConfig kce;
  std::map<std::string, std::string> extra;
};

struct LoadedModel {
  Network network;
  CheckpointMeta meta;
};

void save_checkpoint(const Network& network, const CheckpointMeta& meta,
                     const std::filesystem::path& path);
LoadedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace pcqa
