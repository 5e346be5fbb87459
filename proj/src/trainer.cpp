#include "pcqa/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>

#include "pcqa/error.hpp"
#include "pcqa/metrics.hpp"

namespace pcqa {

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::InvalidConfig, what); };
  if (train_batch < 2) fail("train_batch must be >= 2");
  if (test_batch < 1) fail("test_batch must be >= 1");
  if (epochs < 1) fail("epochs must be >= 1");
  if (!(cls_lr > 0.0) || !(reg_lr > 0.0)) fail("learning rates must be > 0");
  if (cls_step < 1 || reg_step < 1) fail("lr step must be >= 1");
  if (!(lr_factor > 0.0 && lr_factor < 1.0)) fail("lr_factor must lie in (0,1)");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    fail("adam betas must lie in [0,1)");
  }
  if (!(adam_epsilon > 0.0)) fail("adam_epsilon must be > 0");
  network.validate();
}

double step_lr(double lr0, std::size_t step, double factor, std::size_t epoch) {
  return lr0 * std::pow(factor, static_cast<double>(epoch / step));
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& component) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : component) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  // splitmix64 finalizer
  std::uint64_t z = seed ^ h;
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

void Adam::step(nn::ParameterStore& store, double lr, const std::string& skip_prefix) {
  auto& tensors = store.tensors();
  if (m_.size() != tensors.size()) {
    m_.resize(tensors.size());
    v_.resize(tensors.size());
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    nn::Tensor& t = tensors[i];
    if (!t.trainable) continue;
    if (!skip_prefix.empty() && t.name.rfind(skip_prefix, 0) == 0) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    if (m.size() != t.value.size()) {
      m.assign(t.value.size(), 0.0);
      v.assign(t.value.size(), 0.0);
    }
    for (std::size_t j = 0; j < t.value.size(); ++j) {
      const double g = t.grad[j];
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
      t.value[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + epsilon_);
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

KeyClusterSet cached_key_clusters(const std::filesystem::path& cloud_path, const KceConfig& config) {
  const char* dir = std::getenv("PKT_PCQA_CACHE");
  if (dir == nullptr || *dir == '\0') {
    KeyClusterSet set = quantize_to_float(extract_key_clusters(load_ply(cloud_path), config));
    set.radii.clear();
    return set;
  }
  const std::string bytes = read_file(cloud_path);
  char key[17];
  std::snprintf(key, sizeof key, "%016llx",
                static_cast<unsigned long long>(fnv1a(config_key(config), fnv1a(bytes))));
  const std::filesystem::path cache_dir(dir);
  const std::filesystem::path entry = cache_dir / (std::string(key) + ".kcs");
  const std::string name = cloud_path.stem().string();
  if (std::filesystem::exists(entry)) {
    KeyClusterSet set = read_key_clusters(entry);
    set.source_name = name;
    return set;
  }
  KeyClusterSet set = quantize_to_float(extract_key_clusters(load_ply(cloud_path), config));
  set.radii.clear();
  set.source_name = name;
  std::filesystem::create_directories(cache_dir);
  const std::filesystem::path tmp = entry.string() + ".tmp";
  write_key_clusters(set, tmp);
  std::filesystem::rename(tmp, entry);
  return set;
}

TrainingSet build_training_set(const DatasetManifest& manifest, const KceConfig& kce) {
  manifest.validate(true);
  const std::vector<QualityLevel> levels = assign_levels(manifest);
  TrainingSet data;
  data.mos_lo = manifest.mos_lo;
  data.mos_hi = manifest.mos_hi;
  data.kce = kce;
  std::vector<double> all_mos;
  std::array<double, 3> level_sum{}, level_count{};
  double train_sum = 0.0, train_count = 0.0;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const ManifestEntry& e = manifest.entries[i];
    TrainingItem item;
    const std::filesystem::path path = manifest.resolve(e);
    item.name = path.stem().string();
    item.clusters = cached_key_clusters(path, kce);
    item.mos = e.mos;
    item.target = (e.mos - manifest.mos_lo) / (manifest.mos_hi - manifest.mos_lo);
    item.level = levels[i];
    item.split = e.split;
    all_mos.push_back(e.mos);
    if (e.split == Split::train) {
      const auto l = static_cast<std::size_t>(item.level);
      level_sum[l] += e.mos;
      level_count[l] += 1.0;
      train_sum += e.mos;
      train_count += 1.0;
    }
    data.items.push_back(std::move(item));
  }
  data.thresholds = level_thresholds(all_mos);
  for (std::size_t l = 0; l < 3; ++l) {
    data.level_mean_mos[l] = level_count[l] > 0.0 ? level_sum[l] / level_count[l]
                             : train_count > 0.0  ? train_sum / train_count
                                                  : 0.5 * (data.mos_lo + data.mos_hi);
  }
  return data;
}

// ---------------------------------------------------------------------------

nn::Matrix run_inference(Network& network, const std::vector<const PreparedSample*>& samples,
                         std::size_t batch) {
  nn::Matrix out(samples.size(), network.outputs());
  for (std::size_t begin = 0; begin < samples.size(); begin += batch) {
    const std::size_t end = std::min(samples.size(), begin + batch);
    const std::vector<const PreparedSample*> chunk(samples.begin() + static_cast<std::ptrdiff_t>(begin),
                                                   samples.begin() + static_cast<std::ptrdiff_t>(end));
    const nn::Matrix y = network.forward(chunk, false);
    std::copy(y.data.begin(), y.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(begin * out.cols));
  }
  return out;
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

int argmax3(const double* logits) {
  int best = 0;
  for (int c = 1; c < 3; ++c) {
    if (logits[c] > logits[best]) best = c;
  }
  return best;
}

double safe_plcc(const std::vector<double>& x, const std::vector<double>& y) {
  try {
    return plcc(x, y);
  } catch (const Error&) {
    return kNaN;
  }
}

double safe_srocc(const std::vector<double>& x, const std::vector<double>& y) {
  try {
    return srocc(x, y);
  } catch (const Error&) {
    return kNaN;
  }
}

struct SplitScore {
  double loss = 0.0;
  double metric = kNaN;  // accuracy or plcc
  std::optional<double> srocc;
};

// Scores outputs (B x outputs) against the items they came from.
SplitScore score_outputs(HeadKind head, const nn::Matrix& outputs,
                         const std::vector<const TrainingItem*>& items) {
  SplitScore s;
  if (items.empty()) return s;
  if (head == HeadKind::classification) {
    double correct = 0.0, loss = 0.0;
    for (std::size_t i = 0; i < items.size(); ++i) {
      const int label = static_cast<int>(items[i]->level);
      loss += cross_entropy(std::span<const double>(outputs.row(i), 3), label);
      if (argmax3(outputs.row(i)) == label) correct += 1.0;
    }
    s.loss = loss / static_cast<double>(items.size());
    s.metric = correct / static_cast<double>(items.size());
  } else {
    std::vector<double> pred(items.size()), target(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
      pred[i] = outputs(i, 0);
      target[i] = items[i]->target;
    }
    s.loss = items.size() >= 2 ? plcc_loss(pred, target).loss : kNaN;
    s.metric = items.size() >= 2 ? safe_plcc(pred, target) : kNaN;
    s.srocc = items.size() >= 2 ? safe_srocc(pred, target) : kNaN;
  }
  return s;
}

// Level-stratified order: each level shuffled, then taken round-robin, so
// every batch spans the levels as evenly as the data allows.
std::vector<std::size_t> stratified_order(const std::vector<const TrainingItem*>& items,
                                          std::mt19937_64& rng) {
  std::array<std::vector<std::size_t>, 3> by_level;
  for (std::size_t i = 0; i < items.size(); ++i) {
    by_level[static_cast<std::size_t>(items[i]->level)].push_back(i);
  }
  for (auto& bucket : by_level) std::shuffle(bucket.begin(), bucket.end(), rng);
  std::vector<std::size_t> order;
  order.reserve(items.size());
  std::array<std::size_t, 3> next{};
  while (order.size() < items.size()) {
    for (std::size_t l = 0; l < 3; ++l) {
      if (next[l] < by_level[l].size()) order.push_back(by_level[l][next[l]++]);
    }
  }
  return order;
}

// Higher is better; NaN loses to everything.
bool better(const SplitScore& a, const SplitScore& b, HeadKind head) {
  if (std::isnan(a.metric)) return false;
  if (std::isnan(b.metric)) return true;
  if (a.metric != b.metric) return a.metric > b.metric;
  if (head == HeadKind::classification) return a.loss < b.loss;
  return false;
}

TrainResult run_training(const TrainingSet& data, Network network, const TrainConfig& config,
                         double lr0, std::size_t lr_step) {
  config.validate();
  const HeadKind head = network.head();

  std::vector<PreparedSample> samples;
  samples.reserve(data.items.size());
  for (const auto& item : data.items) samples.push_back(prepare_sample(item.clusters, config.network));

  std::vector<const TrainingItem*> train_items, val_items;
  std::vector<const PreparedSample*> train_samples, val_samples;
  for (std::size_t i = 0; i < data.items.size(); ++i) {
    if (data.items[i].split == Split::train) {
      train_items.push_back(&data.items[i]);
      train_samples.push_back(&samples[i]);
    } else {
      val_items.push_back(&data.items[i]);
      val_samples.push_back(&samples[i]);
    }
  }
  if (train_items.size() < 2) throw Error(ErrorKind::TooFewEntries, "training needs >= 2 train entries");

  std::mt19937_64 sampler_rng(derive_seed(config.seed, "sampler"));
  std::mt19937_64 dropout_rng(derive_seed(config.seed, "dropout"));
  Adam adam(config.adam_beta1, config.adam_beta2, config.adam_epsilon);
  const std::string skip = config.freeze_trunk && head == HeadKind::prediction ? "trunk/" : "";

  TrainResult result{std::move(network), {}, {}, 0, 0};
  Network& net = result.network;
  std::vector<std::vector<double>> best_values;
  SplitScore best_score;
  best_score.metric = kNaN;
  bool have_best = false;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = step_lr(lr0, lr_step, config.lr_factor, epoch);
    const std::vector<std::size_t> order = stratified_order(train_items, sampler_rng);

    std::vector<const TrainingItem*> seen;
    nn::Matrix seen_out(0, net.outputs());
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.train_batch) {
      const std::size_t end = std::min(order.size(), begin + config.train_batch);
      if (end - begin < 2) break;
      std::vector<const PreparedSample*> batch;
      std::vector<const TrainingItem*> batch_items;
      for (std::size_t j = begin; j < end; ++j) {
        batch.push_back(train_samples[order[j]]);
        batch_items.push_back(train_items[order[j]]);
      }
      net.parameters().zero_grad();
      const nn::Matrix out = net.forward(batch, true, &dropout_rng);
      nn::Matrix d_out(out.rows, out.cols);
      double loss = 0.0;
      bool step = true;
      if (head == HeadKind::classification) {
        std::vector<double> grad;
        const double inv_b = 1.0 / static_cast<double>(out.rows);
        for (std::size_t r = 0; r < out.rows; ++r) {
          loss += cross_entropy(std::span<const double>(out.row(r), 3),
                                static_cast<int>(batch_items[r]->level), &grad) * inv_b;
          for (std::size_t c = 0; c < 3; ++c) d_out(r, c) = grad[c] * inv_b;
        }
      } else {
        std::vector<double> target(out.rows);
        for (std::size_t r = 0; r < out.rows; ++r) target[r] = batch_items[r]->target;
        const PlccLoss pl = plcc_loss(out.data, target);
        loss = pl.loss;
        if (pl.degenerate) {
          ++result.degenerate_batches;
          step = false;
        }
        d_out.data = pl.grad;
      }
      if (step) {
        net.backward(d_out);
        adam.step(net.parameters(), lr, skip);
      }
      loss_sum += loss;
      ++batches;
      seen.insert(seen.end(), batch_items.begin(), batch_items.end());
      seen_out.data.insert(seen_out.data.end(), out.data.begin(), out.data.end());
      seen_out.rows += out.rows;
    }

    SplitScore train_score = score_outputs(head, seen_out, seen);
    train_score.loss = batches > 0 ? loss_sum / static_cast<double>(batches) : kNaN;
    result.log.push_back({epoch, "train", train_score.loss, train_score.metric, train_score.srocc, lr});

    SplitScore selection = train_score;
    if (!val_items.empty()) {
      const nn::Matrix val_out = run_inference(net, val_samples, config.test_batch);
      selection = score_outputs(head, val_out, val_items);
      result.log.push_back({epoch, "val", selection.loss, selection.metric, selection.srocc, lr});
    }
    if (!have_best || better(selection, best_score, head)) {
      have_best = true;
      best_score = selection;
      result.best_epoch = epoch;
      best_values.clear();
      for (const auto& t : net.parameters().tensors()) best_values.push_back(t.value);
    }
  }

  for (std::size_t i = 0; i < best_values.size(); ++i) {
    net.parameters().at(i).value = best_values[i];
  }
  CheckpointMeta& meta = result.meta;
  meta.stage = to_string(head);
  meta.epoch = result.best_epoch;
  meta.seed = config.seed;
  meta.mos_lo = data.mos_lo;
  meta.mos_hi = data.mos_hi;
  meta.level_thresholds = data.thresholds;
  meta.level_mean_mos = data.level_mean_mos;
  meta.kce = data.kce;
  return result;
}

}  // namespace

TrainResult train_classification(const TrainingSet& data, const TrainConfig& config) {
  Network network(config.network, HeadKind::classification, derive_seed(config.seed, "init"));
  return run_training(data, std::move(network), config, config.cls_lr, config.cls_step);
}

TrainResult train_prediction(const TrainingSet& data, const Network* init, const TrainConfig& config) {
  Network network(config.network, HeadKind::prediction, derive_seed(config.seed, "init"));
  if (init != nullptr) {
    if (!trunk_compatible(init->config(), config.network)) {
      throw Error(ErrorKind::ConfigMismatch,
                  "initial checkpoint trunk does not match the prediction network config");
    }
    network.transplant_trunk(*init);
  }
  TrainResult result = run_training(data, std::move(network), config, config.reg_lr, config.reg_step);
  result.meta.extra["init"] = init != nullptr ? "classification" : "random";
  return result;
}

void write_training_log(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write training log " + path.string());
  out << "epoch,split,loss,acc_or_plcc,srocc,lr\n";
  for (const auto& row : log) {
    out << row.epoch << ',' << row.split << ',' << format_real(row.loss) << ','
        << format_real(row.acc_or_plcc) << ',' << (row.srocc ? format_real(*row.srocc) : "NA")
        << ',' << format_real(row.lr) << '\n';
  }
  if (!out) throw Error(ErrorKind::Io, "failed writing training log " + path.string());
}

}  // namespace pcqa
