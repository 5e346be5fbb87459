#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "pcqa/trainer.hpp"
#include "support.hpp"

using namespace pcqa;

namespace {

double naive_cross_entropy(const std::vector<double>& logits, int label) {
  double z = 0.0;
  for (double v : logits) z += std::exp(v);
  return -std::log(std::exp(logits[static_cast<std::size_t>(label)]) / z);
}

// Pearson value straight from the definition, two-pass.
double naive_plcc(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> normals(std::size_t n, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sd);
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

TrainConfig tiny_train_config() {
  TrainConfig c;
  c.train_batch = 4;
  c.test_batch = 8;
  c.epochs = 3;
  c.cls_step = 2;
  c.reg_step = 2;
  c.network = test::tiny_network();
  c.kce.beta = 8;
  c.kce.k = 4;
  c.seed = 9;
  return c;
}

// Synthetic items straight from random clusters: target rises with the index.
TrainingSet synthetic_set(std::size_t n_train, std::size_t n_val, std::uint64_t seed) {
  TrainingSet data;
  data.mos_lo = 0.0;
  data.mos_hi = 10.0;
  data.kce.beta = 8;
  data.kce.k = 4;
  const std::size_t n = n_train + n_val;
  for (std::size_t i = 0; i < n; ++i) {
    TrainingItem item;
    item.name = "item" + std::to_string(i);
    item.clusters = test::random_clusters(8, 4, seed + i);
    item.mos = 10.0 * static_cast<double>(i + 1) / static_cast<double>(n + 1);
    item.target = item.mos / 10.0;
    item.level = static_cast<QualityLevel>(i * 3 / n);
    item.split = i % (n / std::max<std::size_t>(n_val, 1) + 1) == 1 && n_val > 0 ? Split::test
                                                                                : Split::train;
    data.items.push_back(std::move(item));
  }
  // Recount the split to the requested sizes.
  std::size_t val = 0;
  for (auto& item : data.items) {
    if (item.split == Split::test && ++val > n_val) item.split = Split::train;
  }
  data.thresholds = {10.0 / 3.0, 20.0 / 3.0};
  data.level_mean_mos = {2.0, 5.0, 8.0};
  return data;
}

std::vector<const PreparedSample*> pointers(const std::vector<PreparedSample>& samples) {
  std::vector<const PreparedSample*> out;
  for (const auto& s : samples) out.push_back(&s);
  return out;
}

std::vector<PreparedSample> prepared(const TrainingSet& data, const NetworkConfig& c, Split split) {
  std::vector<PreparedSample> out;
  for (const auto& item : data.items) {
    if (item.split == split) out.push_back(prepare_sample(item.clusters, c));
  }
  return out;
}

class EnvGuard {
 public:
  EnvGuard(const char* name, const std::string& value) : name_(name) {
    if (const char* old = std::getenv(name)) old_ = old;
    ::setenv(name, value.c_str(), 1);
  }
  ~EnvGuard() {
    if (old_) {
      ::setenv(name_, old_->c_str(), 1);
    } else {
      ::unsetenv(name_);
    }
  }

 private:
  const char* name_;
  std::optional<std::string> old_;
};

}  // namespace

TEST_CASE("cross entropy examples") {
  for (int label = 0; label < 3; ++label) {
    CHECK(cross_entropy(std::vector<double>{0, 0, 0}, label) == doctest::Approx(std::log(3.0)).epsilon(1e-15));
  }
  const double saturated = cross_entropy(std::vector<double>{1000.0, 0.0, 0.0}, 0);
  CHECK(std::isfinite(saturated));
  CHECK(saturated >= 0.0);
  CHECK(saturated < 1e-300);
  const double wrong = cross_entropy(std::vector<double>{1000.0, 0.0, 0.0}, 1);
  CHECK(wrong == doctest::Approx(1000.0));
}

TEST_CASE("cross entropy matches the naive formula and its gradient") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> pick(0, 2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::vector<double> logits = normals(3, 100 + trial, 3.0);
    const int label = pick(rng);
    std::vector<double> grad;
    const double value = cross_entropy(logits, label, &grad);
    CHECK(value >= 0.0);
    CHECK(std::abs(value - naive_cross_entropy(logits, label)) <= 1e-10);
    REQUIRE(grad.size() == 3);
    const double h = 1e-6;
    for (std::size_t c = 0; c < 3; ++c) {
      auto up = logits, down = logits;
      up[c] += h;
      down[c] -= h;
      const double fd = (cross_entropy(up, label) - cross_entropy(down, label)) / (2 * h);
      CHECK(test::rel_error(fd, grad[c]) < 1e-5);
    }
  }
}

TEST_CASE("cross entropy falls as the true logit grows") {
  std::vector<double> logits{0.3, -0.2, 0.1};
  double previous = cross_entropy(logits, 1);
  for (int step = 0; step < 50; ++step) {
    logits[1] += 0.5;
    const double now = cross_entropy(logits, 1);
    CHECK(now >= 0.0);
    CHECK(now < previous);
    previous = now;
  }
}

TEST_CASE("plcc examples") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  std::vector<double> affine, negated;
  for (double v : x) {
    affine.push_back(2 * v + 1);
    negated.push_back(-v);
  }
  CHECK(plcc(x, affine) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(plcc(x, negated) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(plcc(std::vector<double>{1, 2, 3}, std::vector<double>{1, 3, 2}) ==
        doctest::Approx(0.5).epsilon(1e-15));
  CHECK(test::kind_of([] { plcc(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}); }) ==
        ErrorKind::ConstantVector);
  CHECK(test::kind_of([] { plcc(std::vector<double>{1, 2}, std::vector<double>{4, 4}); }) ==
        ErrorKind::ConstantVector);
}

TEST_CASE("plcc properties") {
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + trial % 30;
    const std::vector<double> x = normals(n, 500 + trial), y = normals(n, 900 + trial);
    const double r = plcc(x, y);
    CHECK(std::abs(r) <= 1.0);
    CHECK(std::abs(r - naive_plcc(x, y)) <= 1e-12);
    const double a = (trial % 2 ? -1.0 : 1.0) * (0.1 + static_cast<double>(trial) * 0.37);
    const double b = static_cast<double>(trial) - 40.0;
    std::vector<double> mapped;
    for (double v : x) mapped.push_back(a * v + b);
    CHECK(std::abs(plcc(mapped, y) - (a > 0 ? r : -r)) <= 1e-12);
  }
}

TEST_CASE("plcc loss examples and degeneracy") {
  const std::vector<double> target{0.1, 0.5, 0.2, 0.9};
  std::vector<double> negated;
  for (double v : target) negated.push_back(-v);
  CHECK(plcc_loss(target, target).loss == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(plcc_loss(negated, target).loss == doctest::Approx(4.0).epsilon(1e-15));

  for (const auto& [pred, tgt] :
       {std::pair{std::vector<double>{0.3, 0.3, 0.3, 0.3}, target},
        std::pair{target, std::vector<double>{0.5, 0.5, 0.5, 0.5}}}) {
    const PlccLoss l = plcc_loss(pred, tgt);
    CHECK(l.degenerate);
    CHECK(l.loss == 4.0);
    REQUIRE(l.grad.size() == 4);
    for (double g : l.grad) CHECK(g == 0.0);
  }
}

TEST_CASE("plcc loss gradient matches central differences") {
  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    const std::vector<double> pred = normals(8, 1000 + trial), target = normals(8, 2000 + trial);
    const PlccLoss l = plcc_loss(pred, target);
    CHECK(!l.degenerate);
    CHECK(l.loss >= 0.0);
    CHECK(l.loss <= 4.0);
    CHECK(l.loss == doctest::Approx(std::pow(1.0 - naive_plcc(pred, target), 2)).epsilon(1e-12));
    const double h = 1e-6;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      auto up = pred, down = pred;
      up[i] += h;
      down[i] -= h;
      const double fd = (plcc_loss(up, target).loss - plcc_loss(down, target).loss) / (2 * h);
      CHECK(test::rel_error(fd, l.grad[i]) <= 1e-5);
    }
  }
}

TEST_CASE("plcc loss ignores positive affine maps of the prediction") {
  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    const std::vector<double> pred = normals(8, 3000 + trial), target = normals(8, 4000 + trial);
    std::vector<double> mapped;
    const double a = 0.05 + static_cast<double>(trial) * 0.9;
    for (double v : pred) mapped.push_back(a * v + 3.0 - static_cast<double>(trial));
    CHECK(std::abs(plcc_loss(mapped, target).loss - plcc_loss(pred, target).loss) <= 1e-10);
  }
}

TEST_CASE("step schedule table") {
  for (std::size_t epoch = 0; epoch <= 200; ++epoch) {
    double cls = 1e-3, reg = 1e-4;
    for (std::size_t k = 0; k < epoch / 20; ++k) cls *= 0.7;
    for (std::size_t k = 0; k < epoch / 30; ++k) reg *= 0.7;
    CHECK(step_lr(1e-3, 20, 0.7, epoch) == doctest::Approx(cls).epsilon(1e-14));
    CHECK(step_lr(1e-4, 30, 0.7, epoch) == doctest::Approx(reg).epsilon(1e-14));
  }
  CHECK(step_lr(1e-3, 20, 0.7, 19) == 1e-3);
  CHECK(step_lr(1e-3, 20, 0.7, 20) == doctest::Approx(7e-4).epsilon(1e-15));
}

TEST_CASE("train config defaults and validation") {
  const TrainConfig c;
  CHECK(c.train_batch == 16);
  CHECK(c.test_batch == 32);
  CHECK(c.epochs == 200);
  CHECK(c.cls_lr == 1e-3);
  CHECK(c.cls_step == 20);
  CHECK(c.reg_lr == 1e-4);
  CHECK(c.reg_step == 30);
  CHECK(c.lr_factor == 0.7);
  CHECK(c.adam_beta1 == 0.9);
  CHECK(c.adam_beta2 == 0.999);
  c.validate();
  auto invalid = [](auto mutate) {
    TrainConfig bad;
    mutate(bad);
    return test::kind_of([&] { bad.validate(); }) == ErrorKind::InvalidConfig;
  };
  CHECK(invalid([](TrainConfig& t) { t.lr_factor = 1.0; }));
  CHECK(invalid([](TrainConfig& t) { t.lr_factor = 0.0; }));
  CHECK(invalid([](TrainConfig& t) { t.epochs = 0; }));
  CHECK(invalid([](TrainConfig& t) { t.cls_lr = 0.0; }));
  CHECK(invalid([](TrainConfig& t) { t.reg_step = 0; }));
  CHECK(invalid([](TrainConfig& t) { t.train_batch = 1; }));
}

TEST_CASE("level thresholds and assignment") {
  const auto t = level_thresholds({9, 1, 5, 3, 7, 2, 8, 4, 6});
  std::array<int, 3> counts{};
  for (int mos = 1; mos <= 9; ++mos) ++counts[static_cast<std::size_t>(level_of(mos, t))];
  CHECK(counts == std::array<int, 3>{3, 3, 3});
  CHECK(level_of(1, t) == QualityLevel::bad);
  CHECK(level_of(5, t) == QualityLevel::fair);
  CHECK(level_of(9, t) == QualityLevel::excellent);
  // A value on a boundary goes down.
  CHECK(level_of(t[0], t) == QualityLevel::bad);
  CHECK(level_of(t[1], t) == QualityLevel::fair);

  CHECK(test::kind_of([] { level_thresholds({4, 4, 4, 4}); }) == ErrorKind::TooFewEntries);
  CHECK(test::kind_of([] { level_thresholds({1, 2}); }) == ErrorKind::TooFewEntries);

  DatasetManifest m;
  m.mos_lo = 0;
  m.mos_hi = 100;
  for (int i = 0; i < 9; ++i) m.entries.push_back({"a" + std::to_string(i) + ".ply", 10.0 * (i + 1), Split::train, "alpha"});
  // A second source on another part of the scale gets its own tertiles.
  for (int i = 0; i < 6; ++i) m.entries.push_back({"b" + std::to_string(i) + ".ply", 60.0 + i, Split::test, "beta"});
  const auto levels = assign_levels(m);
  REQUIRE(levels.size() == 15);
  for (int i = 0; i < 9; ++i) CHECK(static_cast<int>(levels[static_cast<std::size_t>(i)]) == i / 3);
  for (int i = 0; i < 6; ++i) CHECK(static_cast<int>(levels[static_cast<std::size_t>(9 + i)]) == i / 2);
}

TEST_CASE("level counts stay balanced") {
  // With distinct values the counts differ by at most 2.
  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    const std::size_t n = 3 + trial * 7 % 97;
    std::vector<double> mos = normals(n, 7000 + trial);
    const auto t = level_thresholds(mos);
    std::array<std::size_t, 3> counts{};
    for (double v : mos) ++counts[static_cast<std::size_t>(level_of(v, t))];
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    CHECK(*hi - *lo <= 2);
    // Levels are monotone in MOS.
    for (double a : mos) {
      for (double b : mos) {
        if (a < b) CHECK(level_of(a, t) <= level_of(b, t));
      }
    }
  }
}

TEST_CASE("derived seeds") {
  CHECK(derive_seed(1, "sampler") == derive_seed(1, "sampler"));
  CHECK(derive_seed(1, "sampler") != derive_seed(2, "sampler"));
  CHECK(derive_seed(1, "sampler") != derive_seed(1, "dropout"));
}

TEST_CASE("adam first step moves by the learning rate") {
  nn::ParameterStore store;
  store.add("w", 1, 3);
  store.add("frozen/w", 1, 1);
  store.at(0).value = {1.0, -2.0, 0.5};
  store.at(0).grad = {0.3, -4.0, 0.0};
  store.at(1).value = {7.0};
  store.at(1).grad = {1.0};
  Adam adam;
  adam.step(store, 0.1, "frozen/");
  // Bias correction makes the first update lr * sign(g) up to epsilon.
  CHECK(store.at(0).value[0] == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(store.at(0).value[1] == doctest::Approx(-1.9).epsilon(1e-7));
  CHECK(store.at(0).value[2] == 0.5);
  CHECK(store.at(1).value[0] == 7.0);

  // Second step against a hand-rolled recurrence.
  store.at(0).grad = {-0.1, 2.0, 1.0};
  adam.step(store, 0.1, "frozen/");
  const double b1 = 0.9, b2 = 0.999;
  const double g1[] = {0.3, -4.0, 0.0}, g2[] = {-0.1, 2.0, 1.0};
  double expect[] = {1.0, -2.0, 0.5};
  for (int j = 0; j < 3; ++j) {
    expect[j] -= 0.1 * g1[j] / (std::abs(g1[j]) + 1e-8);
    const double m = b1 * (1 - b1) * g1[j] + (1 - b1) * g2[j];
    const double v = b2 * (1 - b2) * g1[j] * g1[j] + (1 - b2) * g2[j] * g2[j];
    const double mh = m / (1 - b1 * b1), vh = v / (1 - b2 * b2);
    expect[j] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(store.at(0).value[static_cast<std::size_t>(j)] == doctest::Approx(expect[j]).epsilon(1e-12));
  }
}

TEST_CASE("training is deterministic for a seed") {
  const TrainingSet data = synthetic_set(12, 4, 40);
  const TrainConfig c = tiny_train_config();
  const TrainResult a = train_classification(data, c);
  const TrainResult b = train_classification(data, c);
  REQUIRE(a.log.size() == b.log.size());
  CHECK(a.log.size() == 2 * c.epochs);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].loss == b.log[i].loss);
    CHECK(a.log[i].acc_or_plcc == b.log[i].acc_or_plcc);
    CHECK(a.log[i].lr == b.log[i].lr);
  }
  for (std::size_t i = 0; i < a.network.parameters().size(); ++i) {
    CHECK(a.network.parameters().at(i).value == b.network.parameters().at(i).value);
  }
  TrainConfig other = c;
  other.seed = 10;
  const TrainResult d = train_classification(data, other);
  CHECK(d.log.front().loss != a.log.front().loss);
}

TEST_CASE("loss drops early on a two-item set") {
  TrainingSet data = synthetic_set(2, 0, 70);
  data.items[0].level = QualityLevel::bad;
  data.items[1].level = QualityLevel::excellent;
  TrainConfig c = tiny_train_config();
  c.train_batch = 2;
  c.epochs = 5;  // one step per epoch
  const TrainResult r = train_classification(data, c);
  REQUIRE(r.log.size() == 5);
  const double first = r.log[0].loss;
  CHECK(std::abs(first - std::log(3.0)) < 1.0);
  bool dropped = false;
  for (std::size_t s = 1; s < 5; ++s) dropped = dropped || r.log[s].loss < first;
  CHECK(dropped);
}

TEST_CASE("log rows and lr follow the schedule") {
  const TrainingSet data = synthetic_set(12, 4, 80);
  TrainConfig c = tiny_train_config();
  c.epochs = 5;
  const TrainResult r = train_prediction(data, nullptr, c);
  REQUIRE(r.log.size() == 10);
  for (std::size_t i = 0; i < r.log.size(); ++i) {
    CHECK(r.log[i].epoch == i / 2);
    CHECK(r.log[i].split == (i % 2 ? "val" : "train"));
    CHECK(r.log[i].lr == step_lr(c.reg_lr, c.reg_step, c.lr_factor, i / 2));
    CHECK(r.log[i].srocc.has_value());
  }
  CHECK(r.meta.stage == "prediction");
  CHECK(r.meta.extra.at("init") == "random");
  CHECK(r.best_epoch < c.epochs);

  const auto dir = test::scratch_dir("trainlog");
  write_training_log(r.log, dir / "log.csv");
  const TrainResult cls = train_classification(data, c);
  write_training_log(cls.log, dir / "cls.csv");
  for (const char* name : {"log.csv", "cls.csv"}) {
    std::ifstream in(dir / name);
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,split,loss,acc_or_plcc,srocc,lr");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      ++rows;
      CHECK(std::count(line.begin(), line.end(), ',') == 5);
      if (std::string(name) == "cls.csv") CHECK(line.find(",NA,") != std::string::npos);
    }
    CHECK(rows == 10);
  }
}

TEST_CASE("checkpoint reload reproduces validation outputs") {
  const TrainingSet data = synthetic_set(12, 6, 90);
  const TrainConfig c = tiny_train_config();
  TrainResult r = train_prediction(data, nullptr, c);
  const auto dir = test::scratch_dir("trainckpt");
  save_checkpoint(r.network, r.meta, dir / "model.ckpt");
  LoadedModel loaded = load_checkpoint(dir / "model.ckpt");
  const auto samples = prepared(data, c.network, Split::test);
  const nn::Matrix before = run_inference(r.network, pointers(samples), c.test_batch);
  const nn::Matrix after = run_inference(loaded.network, pointers(samples), c.test_batch);
  CHECK(before.data == after.data);
  // Batching does not change evaluation outputs.
  const nn::Matrix single = run_inference(loaded.network, pointers(samples), 1);
  for (std::size_t i = 0; i < single.data.size(); ++i) CHECK(std::abs(single.data[i] - before.data[i]) <= 1e-12);
  CHECK(loaded.meta.epoch == r.best_epoch);
  CHECK(loaded.meta.stage == "prediction");
}

TEST_CASE("prediction starts from the classification trunk") {
  const TrainingSet data = synthetic_set(12, 4, 110);
  TrainConfig c = tiny_train_config();
  const TrainResult cls = train_classification(data, c);

  c.freeze_trunk = true;
  const TrainResult frozen = train_prediction(data, &cls.network, c);
  CHECK(frozen.meta.extra.at("init") == "classification");
  std::size_t trunk = 0, moved_head = 0;
  for (const auto& t : frozen.network.parameters().tensors()) {
    if (t.name.rfind("trunk/", 0) == 0) {
      if (!t.trainable) continue;
      ++trunk;
      CHECK(t.value == cls.network.parameters().find(t.name)->value);
    } else if (t.trainable) {
      NetworkConfig same = c.network;
      Network fresh(same, HeadKind::prediction, derive_seed(c.seed, "init"));
      if (t.value != fresh.parameters().find(t.name)->value) ++moved_head;
    }
  }
  CHECK(trunk > 0);
  CHECK(moved_head > 0);

  TrainConfig wider = c;
  wider.network.afe2_channels = {12, 18};
  CHECK(test::kind_of([&] { train_prediction(data, &cls.network, wider); }) == ErrorKind::ConfigMismatch);
}

TEST_CASE("constant targets give degenerate batches and no update") {
  TrainingSet data = synthetic_set(8, 0, 130);
  for (auto& item : data.items) item.target = 0.5;
  TrainConfig c = tiny_train_config();
  c.epochs = 2;
  const TrainResult r = train_prediction(data, nullptr, c);
  CHECK(r.degenerate_batches == 4);
  for (const auto& row : r.log) CHECK(row.loss == 4.0);
  const Network fresh(c.network, HeadKind::prediction, derive_seed(c.seed, "init"));
  for (std::size_t i = 0; i < fresh.parameters().size(); ++i) {
    if (fresh.parameters().at(i).trainable) {
      CHECK(r.network.parameters().at(i).value == fresh.parameters().at(i).value);
    }
  }
}

TEST_CASE("cached key clusters") {
  const auto dir = test::scratch_dir("kcecache");
  const auto cache = dir / "cache";
  std::vector<std::filesystem::path> paths;
  for (std::uint64_t s = 0; s < 3; ++s) {
    paths.push_back(dir / ("cloud" + std::to_string(s) + ".ply"));
    save_ply(test::random_cloud(300, 150 + s), paths.back());
  }
  KceConfig kce;
  kce.beta = 16;
  kce.k = 4;

  std::vector<KeyClusterSet> plain;
  {
    EnvGuard off("PKT_PCQA_CACHE", "");
    for (const auto& p : paths) plain.push_back(cached_key_clusters(p, kce));
  }
  EnvGuard on("PKT_PCQA_CACHE", cache.string());
  auto entries = [&] {
    std::size_t n = 0;
    for (const auto& e : std::filesystem::directory_iterator(cache)) n += e.path().extension() == ".kcs";
    return n;
  };
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t i = 0; i < paths.size(); ++i) {
      const KeyClusterSet got = cached_key_clusters(paths[i], kce);
      CHECK(got.clusters == plain[i].clusters);
      CHECK(got.centers == plain[i].centers);
      CHECK(got.key_scores == plain[i].key_scores);
      CHECK(got.source_name == paths[i].stem().string());
      for (double v : got.clusters) CHECK(test::is_float(v));
    }
    CHECK(entries() == 3);
  }
  KceConfig other = kce;
  other.k = 5;
  const KeyClusterSet five = cached_key_clusters(paths[0], other);
  CHECK(five.k == 5);
  CHECK(entries() == 4);
}

TEST_CASE("training set from a manifest") {
  const auto dir = test::scratch_dir("trainset");
  DatasetManifest m;
  m.mos_lo = 1.0;
  m.mos_hi = 5.0;
  m.base_dir = dir;
  for (std::uint64_t s = 0; s < 6; ++s) {
    const std::string name = "c" + std::to_string(s) + ".ply";
    save_ply(test::random_cloud(200, 170 + s), dir / name);
    m.entries.push_back({name, 1.0 + 0.7 * static_cast<double>(s), s % 3 == 2 ? Split::test : Split::train, "set"});
  }
  KceConfig kce;
  kce.beta = 8;
  kce.k = 4;
  EnvGuard off("PKT_PCQA_CACHE", "");
  const TrainingSet data = build_training_set(m, kce);
  const auto levels = assign_levels(m);
  REQUIRE(data.items.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(data.items[i].target == doctest::Approx((m.entries[i].mos - 1.0) / 4.0).epsilon(1e-15));
    CHECK(data.items[i].level == levels[i]);
    CHECK(data.items[i].split == m.entries[i].split);
    CHECK(data.items[i].clusters.beta == 8);
  }
  CHECK(data.mos_lo == 1.0);
  CHECK(data.mos_hi == 5.0);

  m.entries[0].path = "missing.ply";
  CHECK(test::kind_of([&] { build_training_set(m, kce); }) == ErrorKind::Io);
}
