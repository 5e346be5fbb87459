#include "pcqa/network.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "pcqa/error.hpp"
#include "pcqa/geometry.hpp"

namespace pcqa {

using nlohmann::json;
using nn::Matrix;

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::none: return "none";
    case AttentionKind::cse: return "cse";
    case AttentionKind::sse: return "sse";
    case AttentionKind::scse: return "scse";
  }
  return "none";
}

std::string to_string(Placement placement) {
  return std::string(1, static_cast<char>('a' + static_cast<int>(placement)));
}

std::string to_string(HeadKind head) {
  return head == HeadKind::classification ? "classification" : "prediction";
}

AttentionKind parse_attention(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "none") return AttentionKind::none;
  if (t == "cse") return AttentionKind::cse;
  if (t == "sse") return AttentionKind::sse;
  if (t == "scse") return AttentionKind::scse;
  throw Error(ErrorKind::InvalidConfig, "unknown attention kind '" + text + "'");
}

Placement parse_placement(const std::string& text) {
  if (text.size() == 1 && text[0] >= 'a' && text[0] <= 'e') {
    return static_cast<Placement>(text[0] - 'a');
  }
  throw Error(ErrorKind::InvalidConfig, "unknown attention placement '" + text + "' (a..e)");
}

HeadKind parse_head(const std::string& text) {
  if (text == "cls" || text == "classification") return HeadKind::classification;
  if (text == "reg" || text == "prediction") return HeadKind::prediction;
  throw Error(ErrorKind::InvalidConfig, "unknown stage '" + text + "' (cls|reg)");
}

NetworkConfig NetworkConfig::for_head(HeadKind head) {
  NetworkConfig c;
  c.set_radius(head == HeadKind::classification ? kClassificationRadius : kPredictionRadius);
  return c;
}

void NetworkConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::InvalidConfig, what); };
  auto check_widths = [&](const std::vector<std::size_t>& w, const char* name) {
    if (w.empty()) fail(std::string(name) + " channel list is empty");
    for (std::size_t c : w) {
      if (c == 0) fail(std::string(name) + " has a zero width");
    }
  };
  check_widths(fe_channels, "fe");
  check_widths(afe1_channels, "afe1");
  check_widths(afe2_channels, "afe2");
  for (std::size_t c : head_widths) {
    if (c == 0) fail("head has a zero width");
  }
  for (const GroupingSpec* g : {&afe1, &afe2}) {
    if (g->n_centroids == 0 || g->k_group == 0) fail("grouping needs n_centroids, k_group >= 1");
    if (!(g->radius > 0.0) || !std::isfinite(g->radius)) fail("grouping radius must be > 0");
  }
  if (afe2.n_centroids > afe1.n_centroids) fail("afe2 n_centroids exceeds afe1 n_centroids");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0,1)");
}

bool trunk_compatible(const NetworkConfig& a, const NetworkConfig& b) {
  return a.fe_channels == b.fe_channels && a.afe1_channels == b.afe1_channels &&
         a.afe2_channels == b.afe2_channels && a.attention == b.attention &&
         a.placement == b.placement && a.fe_attention == b.fe_attention;
}

namespace {

json grouping_json(const GroupingSpec& g) {
  return {{"n_centroids", g.n_centroids}, {"k_group", g.k_group}, {"radius", g.radius}};
}

GroupingSpec grouping_from(const json& j) {
  return {j.at("n_centroids").get<std::size_t>(), j.at("k_group").get<std::size_t>(),
          j.at("radius").get<double>()};
}

json config_json(const NetworkConfig& c) {
  return {{"fe_channels", c.fe_channels},
          {"afe1_channels", c.afe1_channels},
          {"afe2_channels", c.afe2_channels},
          {"afe1", grouping_json(c.afe1)},
          {"afe2", grouping_json(c.afe2)},
          {"attention", to_string(c.attention)},
          {"placement", to_string(c.placement)},
          {"fe_attention", c.fe_attention},
          {"head_widths", c.head_widths},
          {"dropout", c.dropout}};
}

NetworkConfig config_from(const json& j) {
  NetworkConfig c;
  c.fe_channels = j.at("fe_channels").get<std::vector<std::size_t>>();
  c.afe1_channels = j.at("afe1_channels").get<std::vector<std::size_t>>();
  c.afe2_channels = j.at("afe2_channels").get<std::vector<std::size_t>>();
  c.afe1 = grouping_from(j.at("afe1"));
  c.afe2 = grouping_from(j.at("afe2"));
  c.attention = parse_attention(j.at("attention").get<std::string>());
  c.placement = parse_placement(j.at("placement").get<std::string>());
  c.fe_attention = j.at("fe_attention").get<bool>();
  c.head_widths = j.at("head_widths").get<std::vector<std::size_t>>();
  c.dropout = j.at("dropout").get<double>();
  c.validate();
  return c;
}

}  // namespace

std::string config_to_json(const NetworkConfig& config) { return config_json(config).dump(); }

NetworkConfig config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("network config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

Grouping group_points(const std::vector<Vec3>& positions, const GroupingSpec& spec) {
  const Points3 points(positions);
  Grouping g;
  g.centroid_index = farthest_point_sampling(points, spec.n_centroids, 0);
  g.centroids.reserve(spec.n_centroids);
  g.members.reserve(spec.n_centroids * spec.k_group);
  g.local.reserve(spec.n_centroids * spec.k_group * 3);
  for (std::uint32_t c : g.centroid_index) {
    const Vec3 center = positions[c];
    g.centroids.push_back(center);
    const NeighborIndex ball = ball_query(points, center, spec.radius, spec.k_group);
    for (std::uint32_t m : ball.members) {
      g.members.push_back(m);
      for (int a = 0; a < 3; ++a) g.local.push_back(positions[m][a] - center[a]);
    }
  }
  return g;
}

PreparedSample prepare_sample(const KeyClusterSet& clusters, const NetworkConfig& config) {
  clusters.validate();
  PreparedSample s;
  s.beta = clusters.beta;
  s.k = clusters.k;
  s.input = Matrix(clusters.beta * clusters.k, KeyClusterSet::kFeatures);
  std::copy(clusters.clusters.begin(), clusters.clusters.end(), s.input.data.begin());
  s.key_positions = clusters.centers;
  s.afe1 = group_points(s.key_positions, config.afe1);
  s.afe2 = group_points(s.afe1.centroids, config.afe2);
  return s;
}

// ---------------------------------------------------------------------------

struct Network::Stack {
  std::vector<std::unique_ptr<nn::Layer>> layers;

  Matrix forward(Matrix x, const nn::Context& ctx) {
    for (auto& layer : layers) {
      x = layer->forward(x, ctx);
#ifndef NDEBUG
      for (double v : x.data) assert(std::isfinite(v) && "non-finite activation");
#endif
    }
    return x;
  }

  Matrix backward(Matrix dy) {
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) dy = (*it)->backward(dy);
    return dy;
  }
};

struct Network::Impl {
  Stack fe, afe1, afe2, head;
  nn::GroupMaxPool fe_pool, pool1, pool2, global_pool;

  // Batch layout of the last forward pass.
  std::vector<const PreparedSample*> batch;
  std::size_t rows0 = 0, rows1 = 0, c0 = 0, c1 = 0;
};

namespace {

// Attention slots of one conv stack: after the batch norm of conv i, and
// after the final ReLU.
struct AttentionSlots {
  std::vector<bool> after_bn;
  bool after_relu = false;
};

AttentionSlots slots_for(const NetworkConfig& c, int stage, std::size_t convs) {
  AttentionSlots s;
  s.after_bn.assign(convs, false);
  if (c.attention == AttentionKind::none) return s;
  if (stage == 0) {
    if (c.fe_attention) s.after_bn.back() = true;
    return s;
  }
  switch (c.placement) {
    case Placement::a: s.after_bn.back() = true; break;
    case Placement::b: s.after_relu = true; break;
    case Placement::c:
      if (stage == 1) s.after_bn.back() = true;
      break;
    case Placement::d:
      if (stage == 2) s.after_bn.back() = true;
      break;
    case Placement::e:
      s.after_bn.back() = true;
      if (convs >= 2) s.after_bn[convs - 2] = true;
      break;
  }
  return s;
}

void add_conv_stack(std::vector<std::unique_ptr<nn::Layer>>& layers, nn::ParameterStore& store,
                    const std::string& prefix, std::size_t in,
                    const std::vector<std::size_t>& widths, const AttentionSlots& slots,
                    AttentionKind kind) {
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const std::string idx = std::to_string(i);
    layers.push_back(std::make_unique<nn::Linear>(store, prefix + "/conv" + idx, in, widths[i]));
    layers.push_back(std::make_unique<nn::BatchNorm>(store, prefix + "/bn" + idx, widths[i]));
    if (slots.after_bn[i]) {
      layers.push_back(
          std::make_unique<nn::SqueezeExcite>(store, prefix + "/se" + idx, widths[i], kind));
    }
    layers.push_back(std::make_unique<nn::Relu>());
    in = widths[i];
  }
  if (slots.after_relu) {
    layers.push_back(std::make_unique<nn::SqueezeExcite>(
        store, prefix + "/se_out", widths.back(), kind));
  }
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// PyTorch-style U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights, biases and
// attention matrices; batch-norm tensors keep their constructor values.
void init_parameters(nn::ParameterStore& store, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::size_t last_fan_in = 1;
  for (auto& t : store.tensors()) {
    std::size_t fan_in = 0;
    if (ends_with(t.name, "/weight")) {
      fan_in = t.rows;
      last_fan_in = fan_in;
    } else if (ends_with(t.name, "/bias")) {
      fan_in = last_fan_in;
    } else if (ends_with(t.name, "/cse_reduce") || ends_with(t.name, "/cse_expand")) {
      fan_in = t.cols;
    } else if (ends_with(t.name, "/sse_squeeze")) {
      fan_in = t.rows;
    }
    if (fan_in == 0) continue;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> uniform(-bound, bound);
    for (double& v : t.value) v = uniform(rng);
  }
}

// Rows of the grouped input: [local xyz, features of the member].
Matrix gather_groups(const std::vector<const PreparedSample*>& batch, const Matrix& features,
                     std::size_t rows_per_sample, const Grouping PreparedSample::*which) {
  const std::size_t c = features.cols;
  const std::size_t group_rows = (batch[0]->*which).members.size();
  Matrix out(batch.size() * group_rows, c + 3);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Grouping& g = batch[b]->*which;
    for (std::size_t j = 0; j < group_rows; ++j) {
      double* row = out.row(b * group_rows + j);
      std::copy_n(g.local.data() + j * 3, 3, row);
      std::copy_n(features.row(b * rows_per_sample + g.members[j]), c, row + 3);
    }
  }
  return out;
}

Matrix scatter_groups(const std::vector<const PreparedSample*>& batch, const Matrix& d_grouped,
                      std::size_t rows_per_sample, const Grouping PreparedSample::*which) {
  const std::size_t c = d_grouped.cols - 3;
  const std::size_t group_rows = (batch[0]->*which).members.size();
  Matrix out(batch.size() * rows_per_sample, c);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Grouping& g = batch[b]->*which;
    for (std::size_t j = 0; j < group_rows; ++j) {
      const double* src = d_grouped.row(b * group_rows + j) + 3;
      double* dst = out.row(b * rows_per_sample + g.members[j]);
      for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
    }
  }
  return out;
}

nn::Segments even_segments(std::size_t samples, std::size_t rows_per_sample) {
  nn::Segments s(samples + 1);
  for (std::size_t b = 0; b <= samples; ++b) s[b] = b * rows_per_sample;
  return s;
}

}  // namespace

Network::Network(const NetworkConfig& config, HeadKind head, std::uint64_t seed)
    : config_(config), head_(head), store_(std::make_unique<nn::ParameterStore>()),
      impl_(std::make_unique<Impl>()) {
  config_.validate();
  auto& s = *store_;
  const auto& c = config_;
  add_conv_stack(impl_->fe.layers, s, "trunk/fe", KeyClusterSet::kFeatures, c.fe_channels,
                 slots_for(c, 0, c.fe_channels.size()), c.attention);
  add_conv_stack(impl_->afe1.layers, s, "trunk/afe1", c.fe_channels.back() + 3, c.afe1_channels,
                 slots_for(c, 1, c.afe1_channels.size()), c.attention);
  add_conv_stack(impl_->afe2.layers, s, "trunk/afe2", c.afe1_channels.back() + 3,
                 c.afe2_channels, slots_for(c, 2, c.afe2_channels.size()), c.attention);
  const std::string prefix = head == HeadKind::classification ? "cls_head" : "reg_head";
  std::size_t in = c.afe2_channels.back();
  auto& layers = impl_->head.layers;
  for (std::size_t i = 0; i < c.head_widths.size(); ++i) {
    const std::string idx = std::to_string(i);
    layers.push_back(std::make_unique<nn::Linear>(s, prefix + "/fc" + idx, in, c.head_widths[i]));
    layers.push_back(std::make_unique<nn::BatchNorm>(s, prefix + "/bn" + idx, c.head_widths[i]));
    layers.push_back(std::make_unique<nn::Relu>());
    layers.push_back(std::make_unique<nn::Dropout>(c.dropout));
    in = c.head_widths[i];
  }
  layers.push_back(std::make_unique<nn::Linear>(s, prefix + "/out", in, outputs()));
  if (head == HeadKind::prediction) layers.push_back(std::make_unique<nn::Sigmoid>());
  init_parameters(s, seed);
}

Network::~Network() = default;
Network::Network(Network&&) noexcept = default;
Network& Network::operator=(Network&&) noexcept = default;

Matrix Network::forward(const std::vector<const PreparedSample*>& batch, bool train,
                        std::mt19937_64* rng) {
  if (batch.empty()) throw Error(ErrorKind::ShapeMismatch, "empty batch");
  const PreparedSample& first = *batch[0];
  const std::size_t n1 = config_.afe1.n_centroids, k1 = config_.afe1.k_group;
  const std::size_t n2 = config_.afe2.n_centroids, k2 = config_.afe2.k_group;
  for (const PreparedSample* s : batch) {
    if (s->beta != first.beta || s->k != first.k || s->afe1.members.size() != n1 * k1 ||
        s->afe2.members.size() != n2 * k2 || s->input.cols != KeyClusterSet::kFeatures) {
      throw Error(ErrorKind::ShapeMismatch, "batch samples disagree with each other or the config");
    }
  }
  Impl& m = *impl_;
  m.batch = batch;
  const std::size_t b = batch.size();
  const std::size_t beta = first.beta, k = first.k;

  Matrix x(b * beta * k, KeyClusterSet::kFeatures);
  for (std::size_t i = 0; i < b; ++i) {
    std::copy(batch[i]->input.data.begin(), batch[i]->input.data.end(),
              x.data.begin() + static_cast<std::ptrdiff_t>(i * beta * k * KeyClusterSet::kFeatures));
  }
  nn::Context ctx{train, nullptr, rng};

  nn::Segments seg = even_segments(b, beta * k);
  ctx.segments = &seg;
  m.fe_pool.group = k;
  Matrix f0 = m.fe_pool.forward(m.fe.forward(std::move(x), ctx));
  m.rows0 = beta;
  m.c0 = f0.cols;

  seg = even_segments(b, n1 * k1);
  m.pool1.group = k1;
  Matrix f1 = m.pool1.forward(m.afe1.forward(gather_groups(batch, f0, beta, &PreparedSample::afe1), ctx));
  m.rows1 = n1;
  m.c1 = f1.cols;

  seg = even_segments(b, n2 * k2);
  m.pool2.group = k2;
  Matrix f2 = m.pool2.forward(m.afe2.forward(gather_groups(batch, f1, n1, &PreparedSample::afe2), ctx));

  m.global_pool.group = n2;
  Matrix g = m.global_pool.forward(f2);
  seg = even_segments(b, 1);
  return m.head.forward(std::move(g), ctx);
}

void Network::backward(const Matrix& d_output) {
  Impl& m = *impl_;
  if (m.batch.empty()) throw Error(ErrorKind::InvalidArgument, "backward without forward");
  Matrix d = m.global_pool.backward(m.head.backward(d_output));
  d = m.afe2.backward(m.pool2.backward(d));
  d = scatter_groups(m.batch, d, m.rows1, &PreparedSample::afe2);
  d = m.afe1.backward(m.pool1.backward(d));
  d = scatter_groups(m.batch, d, m.rows0, &PreparedSample::afe1);
  m.fe.backward(m.fe_pool.backward(d));
}

FeatureMap Network::fe_forward(const KeyClusterSet& clusters) {
  clusters.validate();
  Matrix x(clusters.beta * clusters.k, KeyClusterSet::kFeatures);
  std::copy(clusters.clusters.begin(), clusters.clusters.end(), x.data.begin());
  const nn::Segments seg{0, x.rows};
  const nn::Context ctx{false, &seg, nullptr};
  nn::GroupMaxPool pool;
  pool.group = clusters.k;
  FeatureMap out;
  out.positions = clusters.centers;
  out.features = pool.forward(impl_->fe.forward(std::move(x), ctx));
  out.stage = "fe";
  return out;
}

FeatureMap Network::afe_forward(const FeatureMap& input, int stage) {
  if (stage != 1 && stage != 2) throw Error(ErrorKind::InvalidArgument, "stage must be 1 or 2");
  if (input.positions.size() != input.features.rows) {
    throw Error(ErrorKind::ShapeMismatch, "feature map positions and features disagree");
  }
  const GroupingSpec& spec = stage == 1 ? config_.afe1 : config_.afe2;
  PreparedSample holder;
  holder.afe1 = group_points(input.positions, spec);
  const std::vector<const PreparedSample*> one{&holder};
  Matrix grouped = gather_groups(one, input.features, input.positions.size(), &PreparedSample::afe1);
  const nn::Segments seg{0, grouped.rows};
  const nn::Context ctx{false, &seg, nullptr};
  nn::GroupMaxPool pool;
  pool.group = spec.k_group;
  Stack& stack = stage == 1 ? impl_->afe1 : impl_->afe2;
  FeatureMap out;
  out.features = pool.forward(stack.forward(std::move(grouped), ctx));
  out.positions = holder.afe1.centroids;
  out.stage = stage == 1 ? "afe1" : "afe2";
  return out;
}

namespace {

Matrix global_max(const Matrix& features) {
  nn::GroupMaxPool pool;
  pool.group = features.rows;
  return pool.forward(features);
}

}  // namespace

std::array<double, 3> Network::classify(const FeatureMap& final_map) {
  if (head_ != HeadKind::classification) {
    throw Error(ErrorKind::InvalidArgument, "classify needs a classification head");
  }
  const nn::Context ctx{false, nullptr, nullptr};
  const Matrix logits = impl_->head.forward(global_max(final_map.features), ctx);
  return {logits.data[0], logits.data[1], logits.data[2]};
}

double Network::predict_mos(const FeatureMap& final_map) {
  if (head_ != HeadKind::prediction) {
    throw Error(ErrorKind::InvalidArgument, "predict_mos needs a prediction head");
  }
  const nn::Context ctx{false, nullptr, nullptr};
  return impl_->head.forward(global_max(final_map.features), ctx).data[0];
}

void Network::transplant_trunk(const Network& source) {
  if (!trunk_compatible(config_, source.config_)) {
    throw Error(ErrorKind::ConfigMismatch, "trunk configurations differ");
  }
  for (auto& t : store_->tensors()) {
    if (t.name.rfind("trunk/", 0) != 0) continue;
    const nn::Tensor* src = source.store_->find(t.name);
    if (src == nullptr || src->rows != t.rows || src->cols != t.cols) {
      throw Error(ErrorKind::ConfigMismatch, "trunk tensor " + t.name + " missing or reshaped");
    }
    t.value = src->value;
  }
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'P', 'C', 'Q', 'A', 'C', 'K', 'P', 'T'};

json kce_json(const KceConfig& k) {
  json j = {{"beta", k.beta},
            {"k", k.k},
            {"filter_length", k.filter.length},
            {"filter", k.filter.coefficients},
            {"tau_factor", k.tau_factor},
            {"growth_r0", k.growth.r0},
            {"growth", k.growth.growth}};
  j["tau"] = k.tau ? json(*k.tau) : json(nullptr);
  j["sigma2"] = k.sigma2 ? json(*k.sigma2) : json(nullptr);
  return j;
}

KceConfig kce_from(const json& j) {
  KceConfig k;
  k.beta = j.at("beta").get<std::size_t>();
  k.k = j.at("k").get<std::size_t>();
  k.filter.length = j.at("filter_length").get<std::size_t>();
  k.filter.coefficients = j.at("filter").get<std::vector<double>>();
  k.tau_factor = j.at("tau_factor").get<double>();
  k.growth.r0 = j.at("growth_r0").get<double>();
  k.growth.growth = j.at("growth").get<double>();
  if (!j.at("tau").is_null()) k.tau = j.at("tau").get<double>();
  if (!j.at("sigma2").is_null()) k.sigma2 = j.at("sigma2").get<double>();
  return k;
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw Error(ErrorKind::TruncatedBody, "checkpoint truncated in " + what);
  }
  return v;
}

}  // namespace

void save_checkpoint(const Network& network, const CheckpointMeta& meta,
                     const std::filesystem::path& path) {
  json header;
  header["version"] = kCheckpointVersion;
  header["head"] = to_string(network.head());
  header["config"] = config_json(network.config());
  header["meta"] = {{"stage", meta.stage},
                    {"epoch", meta.epoch},
                    {"seed", meta.seed},
                    {"mos_lo", meta.mos_lo},
                    {"mos_hi", meta.mos_hi},
                    {"level_thresholds", meta.level_thresholds},
                    {"level_mean_mos", meta.level_mean_mos},
                    {"kce", kce_json(meta.kce)},
                    {"extra", meta.extra}};
  json tensors = json::array();
  for (const auto& t : network.parameters().tensors()) {
    tensors.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
  }
  header["tensors"] = tensors;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : network.parameters().tensors()) {
    out.write(reinterpret_cast<const char*>(t.value.data()),
              static_cast<std::streamsize>(t.value.size() * sizeof(double)));
  }
  if (!out) throw Error(ErrorKind::Io, "failed writing checkpoint " + path.string());
}

LoadedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw Error(ErrorKind::MalformedHeader, path.string() + " is not a checkpoint");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version == 0 || version > kCheckpointVersion) {
    throw Error(ErrorKind::MalformedHeader, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto length = get<std::uint64_t>(in, "header length");
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length))) {
    throw Error(ErrorKind::TruncatedBody, "checkpoint header truncated");
  }
  json header;
  CheckpointMeta meta;
  NetworkConfig config;
  HeadKind head;
  try {
    header = json::parse(text);
    config = config_from(header.at("config"));
    head = parse_head(header.at("head").get<std::string>());
    const json& m = header.at("meta");
    meta.stage = m.at("stage").get<std::string>();
    meta.epoch = m.at("epoch").get<std::size_t>();
    meta.seed = m.at("seed").get<std::uint64_t>();
    meta.mos_lo = m.at("mos_lo").get<double>();
    meta.mos_hi = m.at("mos_hi").get<double>();
    meta.level_thresholds = m.at("level_thresholds").get<std::array<double, 2>>();
    meta.level_mean_mos = m.at("level_mean_mos").get<std::array<double, 3>>();
    meta.kce = kce_from(m.at("kce"));
    meta.extra = m.at("extra").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::MalformedHeader, std::string("checkpoint header: ") + e.what());
  }
  if (meta.stage != to_string(head)) {
    throw Error(ErrorKind::MalformedHeader, "checkpoint stage disagrees with its head");
  }
  Network network(config, head, 0);
  const json& tensors = header.at("tensors");
  auto& store = network.parameters();
  if (tensors.size() != store.size()) {
    throw Error(ErrorKind::ConfigMismatch, "checkpoint tensor count does not match its config");
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    nn::Tensor& t = store.at(i);
    const json& d = tensors[i];
    if (d.at("name").get<std::string>() != t.name || d.at("rows").get<std::size_t>() != t.rows ||
        d.at("cols").get<std::size_t>() != t.cols) {
      throw Error(ErrorKind::ConfigMismatch,
                  "checkpoint tensor " + d.at("name").get<std::string>() + " does not match its config");
    }
    if (!in.read(reinterpret_cast<char*>(t.value.data()),
                 static_cast<std::streamsize>(t.value.size() * sizeof(double)))) {
      throw Error(ErrorKind::TruncatedBody, "checkpoint data truncated at " + t.name);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorKind::MalformedHeader, "trailing bytes after checkpoint data");
  }
  return {std::move(network), std::move(meta)};
}

}  // namespace pcqa
