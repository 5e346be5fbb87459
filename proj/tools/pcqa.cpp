// pcqa: key clusters, synthetic corpora, two-stage training, scoring and evaluation.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "pcqa/cli.hpp"
#include "pcqa/distortion.hpp"
#include "pcqa/error.hpp"
#include "pcqa/metrics.hpp"

namespace fs = std::filesystem;
using namespace pcqa;

namespace {

template <typename T>
std::vector<T> parse_list(const std::string& text, T (*one)(const std::string&)) {
  std::vector<T> out;
  std::istringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    if (!part.empty()) out.push_back(one(part));
  }
  if (out.empty()) throw Error(ErrorKind::InvalidArgument, "empty list '" + text + "'");
  return out;
}

int parse_int(const std::string& s) {
  std::size_t used = 0;
  const int v = std::stoi(s, &used);
  if (used != s.size()) throw Error(ErrorKind::InvalidArgument, "not an integer: " + s);
  return v;
}

std::uint64_t parse_u64(const std::string& s) {
  std::size_t used = 0;
  const auto v = std::stoull(s, &used);
  if (used != s.size()) throw Error(ErrorKind::InvalidArgument, "not an integer: " + s);
  return v;
}

DistortionKind parse_kind(const std::string& s) { return parse_distortion_kind(s); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out || !(out << text)) throw Error(ErrorKind::Io, "cannot write " + path.string());
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) { return fs::path(p.string() + suffix); }

// --- keyclusters -----------------------------------------------------------

struct KeyclusterArgs {
  std::string input, out;
  std::size_t beta = 1024, k = 16;
  double tau_factor = 3.0;
};

int run_keyclusters(const KeyclusterArgs& a) {
  KceConfig config;
  config.beta = a.beta;
  config.k = a.k;
  config.tau_factor = a.tau_factor;
  KeyClusterSet set = extract_key_clusters(load_ply(a.input), config);
  write_key_clusters(set, a.out);
  const KeyClusterSet back = read_key_clusters(a.out);
  back.validate();
  std::cout << "wrote " << a.out << " beta=" << back.beta << " k=" << back.k << " features="
            << KeyClusterSet::kFeatures << "\n";
  return 0;
}

// --- make-refs / synth -------------------------------------------------------

struct RefsArgs {
  std::string out;
  std::size_t count = 6, points = 4000;
  std::uint64_t seed = 0;
};

int run_make_refs(const RefsArgs& a) {
  fs::create_directories(a.out);
  const auto refs = make_reference_clouds(a.count, a.points, derive_seed(a.seed, "refs"));
  for (const auto& cloud : refs) {
    const fs::path path = fs::path(a.out) / (cloud.name + ".ply");
    save_ply(cloud, path);
    load_ply(path).validate();
  }
  std::cout << "wrote " << refs.size() << " reference clouds to " << a.out << "\n";
  return 0;
}

struct SynthArgs {
  std::string refs, out;
  std::string kinds = "color-noise,geometry-gaussian,downsample,octree-quantize";
  std::string levels = "1,2,3,4,5";
  std::string seeds = "0";
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(a.refs)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ply") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorKind::InvalidArgument, "no .ply references in " + a.refs);
  std::vector<PointCloud> refs;
  for (const auto& f : files) refs.push_back(load_ply(f));
  CorpusOptions options;
  options.kinds = parse_list<DistortionKind>(a.kinds, parse_kind);
  options.levels = parse_list<int>(a.levels, parse_int);
  options.seeds = parse_list<std::uint64_t>(a.seeds, parse_u64);
  options.test_fraction = a.test_fraction;
  options.split_seed = derive_seed(a.seed, "split");
  const DatasetManifest manifest = synthesize_corpus(refs, options, a.out);
  load_manifest(fs::path(a.out) / "manifest.csv").validate(true);
  std::cout << "wrote " << manifest.entries.size() << " clouds (train=" << manifest.count(Split::train)
            << " test=" << manifest.count(Split::test) << ") to " << a.out << "\n";
  return 0;
}

// --- train ---------------------------------------------------------------------

struct TrainArgs {
  std::string stage, manifest, init, config, out, log;
  std::map<std::string, std::string> flags;
};

int run_train(TrainArgs& a, CommandConfig& settings) {
  const HeadKind head = parse_head(a.stage);
  if (!a.config.empty()) settings.apply_file(a.config);
  const TrainConfig config = train_config_from(settings, head);

  std::optional<LoadedModel> init;
  if (!a.init.empty()) {
    if (head != HeadKind::prediction) {
      throw Error(ErrorKind::InvalidArgument, "--init applies to --stage reg only");
    }
    init.emplace(load_checkpoint(a.init));
    if (!trunk_compatible(init->network.config(), config.network)) {
      throw Error(ErrorKind::ConfigMismatch, "--init checkpoint trunk does not match the configured network");
    }
    if (!(init->meta.kce == config.kce)) {
      throw Error(ErrorKind::ConfigMismatch, "--init checkpoint was trained on different key clusters");
    }
  }

  const DatasetManifest manifest = load_manifest(a.manifest);
  const TrainingSet data = build_training_set(manifest, config.kce);
  TrainResult result = head == HeadKind::classification
                           ? train_classification(data, config)
                           : train_prediction(data, init ? &init->network : nullptr, config);
  result.meta.extra["manifest"] = fs::path(a.manifest).filename().string();

  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const fs::path log = a.log.empty() ? with_suffix(out, ".log.csv") : fs::path(a.log);
  save_checkpoint(result.network, result.meta, out);
  write_training_log(result.log, log);
  write_text(with_suffix(out, ".settings.txt"), "stage = " + a.stage + "\n" + settings.describe());
  load_checkpoint(out);

  const EpochLog* best = nullptr;
  for (const auto& row : result.log) {
    if (row.epoch == result.best_epoch) best = &row;  // val row when present
  }
  std::cout << "stage=" << to_string(head) << " best_epoch=" << result.best_epoch;
  if (best != nullptr) {
    std::cout << " " << best->split << "_loss=" << format_real(best->loss) << " " << best->split
              << (head == HeadKind::classification ? "_acc=" : "_plcc=") << format_real(best->acc_or_plcc);
  }
  std::cout << "\n";
  return 0;
}

// --- score / eval / psnr ------------------------------------------------------

int run_score(const std::string& model, const std::string& input) {
  ModelPredictor predictor(load_checkpoint(model));
  const Prediction p = predictor.predict(input);
  char line[128];
  std::snprintf(line, sizeof line, "mos=%.4f level=%s", p.mos, to_string(p.level).c_str());
  std::cout << line << "\n";
  return 0;
}

int run_eval(const std::string& model, const std::string& manifest_path, const std::string& out,
             const std::string& split) {
  ModelPredictor predictor(load_checkpoint(model));
  const DatasetManifest manifest = load_manifest(manifest_path);
  std::optional<Split> which;
  if (split != "all") which = parse_split(split);
  const EvalReport report = evaluate(predictor, manifest, which);
  write_report(report, out);
  std::cout << "items=" << report.items.size() << " plcc=" << format_real(report.plcc)
            << " srocc=" << format_real(report.srocc) << " accuracy=" << format_real(report.accuracy)
            << "\n";
  return 0;
}

int run_psnr(const std::string& ref, const std::string& dist) {
  const PsnrResult r = psnr_p2p(load_ply(ref), load_ply(dist));
  char line[128];
  std::snprintf(line, sizeof line, "geom_psnr=%.4f y_psnr=%.4f", r.geometry_db, r.luma_db);
  std::cout << line << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point cloud quality assessment with key clusters and progressive training"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "pcqa 1.0");

  KeyclusterArgs kc;
  auto* keyclusters = app.add_subcommand("keyclusters", "Extract and store the key clusters of a cloud");
  keyclusters->add_option("input", kc.input, "Input PLY")->required()->check(CLI::ExistingFile);
  keyclusters->add_option("--beta", kc.beta, "Number of key points")->capture_default_str();
  keyclusters->add_option("--k", kc.k, "Points per cluster")->capture_default_str();
  keyclusters->add_option("--tau-factor", kc.tau_factor, "Edge cutoff in mean nearest-neighbor distances")
      ->capture_default_str();
  keyclusters->add_option("--out", kc.out, "Output .kcs file")->required();

  RefsArgs refs;
  auto* make_refs = app.add_subcommand("make-refs", "Write synthetic pristine reference clouds");
  make_refs->add_option("--out", refs.out, "Output directory")->required();
  make_refs->add_option("--count", refs.count)->capture_default_str();
  make_refs->add_option("--points", refs.points)->capture_default_str();
  make_refs->add_option("--seed", refs.seed)->capture_default_str();

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "Distort references into a scored corpus with a manifest");
  synth->add_option("--refs", sy.refs, "Directory of reference PLYs")->required()->check(CLI::ExistingDirectory);
  synth->add_option("--out", sy.out, "Output directory")->required();
  synth->add_option("--kinds", sy.kinds)->capture_default_str();
  synth->add_option("--levels", sy.levels)->capture_default_str();
  synth->add_option("--seeds", sy.seeds, "Distortion seeds")->capture_default_str();
  synth->add_option("--test-fraction", sy.test_fraction)->capture_default_str();
  synth->add_option("--seed", sy.seed, "Split seed")->capture_default_str();

  TrainArgs tr;
  CommandConfig settings;
  add_train_defaults(settings);
  auto* train = app.add_subcommand("train", "Train the classifier (cls) or the MOS regressor (reg)");
  train->add_option("--stage", tr.stage)->required()->check(CLI::IsMember({"cls", "reg"}));
  train->add_option("--manifest", tr.manifest)->required()->check(CLI::ExistingFile);
  train->add_option("--init", tr.init, "Classification checkpoint supplying the trunk");
  train->add_option("--config", tr.config, "key = value settings file")->check(CLI::ExistingFile);
  train->add_option("--out", tr.out, "Checkpoint path")->required();
  train->add_option("--log", tr.log, "Training log CSV (default <out>.log.csv)");
  for (const auto& [key, s] : settings.settings()) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    train->add_option(flag, tr.flags[key], "default " + s.value);
  }

  std::string model, input, manifest, out, split = "test", ref, dist;
  auto* score = app.add_subcommand("score", "Predict the MOS and quality level of one cloud");
  score->add_option("--model", model)->required();
  score->add_option("input", input)->required()->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint over a manifest");
  eval->add_option("--model", model)->required();
  eval->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  eval->add_option("--out", out, "Report directory")->required();
  eval->add_option("--split", split)->check(CLI::IsMember({"train", "test", "all"}))->capture_default_str();

  auto* psnr = app.add_subcommand("psnr", "Point-to-point geometry and luma PSNR of two clouds");
  psnr->add_option("reference", ref)->required()->check(CLI::ExistingFile);
  psnr->add_option("distorted", dist)->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*keyclusters) return run_keyclusters(kc);
    if (*make_refs) return run_make_refs(refs);
    if (*synth) return run_synth(sy);
    if (*train) {
      for (const auto& [key, value] : tr.flags) {
        std::string flag = "--" + key;
        std::replace(flag.begin(), flag.end(), '_', '-');
        if (train->count(flag) > 0) settings.set_flag(key, value);
      }
      settings.subcommand = "train";
      return run_train(tr, settings);
    }
    if (*score) {
      if (!fs::exists(model)) throw Error(ErrorKind::Io, "model file not found: " + model);
      return run_score(model, input);
    }
    if (*eval) {
      if (!fs::exists(model)) throw Error(ErrorKind::Io, "model file not found: " + model);
      return run_eval(model, manifest, out, split);
    }
    if (*psnr) return run_psnr(ref, dist);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
