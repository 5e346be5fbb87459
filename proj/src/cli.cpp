#include "pcqa/cli.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "pcqa/error.hpp"
#include "pcqa/metrics.hpp"

namespace pcqa {

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::default_value: return "default";
    case Provenance::config_file: return "config-file";
    case Provenance::flag: return "flag";
  }
  return "default";
}

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw Error(ErrorKind::InvalidConfig, key + " = '" + value + "' is not " + want);
}

}  // namespace

void CommandConfig::set_default(const std::string& key, const std::string& value) {
  settings_[key] = {value, Provenance::default_value};
}

void CommandConfig::apply_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  apply_text(text.str(), path.string());
}

void CommandConfig::apply_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::InvalidConfig,
                  origin + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = settings_.find(key);
    if (it == settings_.end()) {
      throw Error(ErrorKind::InvalidConfig,
                  origin + ":" + std::to_string(number) + ": unknown key '" + key + "'");
    }
    if (it->second.source != Provenance::flag) it->second = {value, Provenance::config_file};
  }
}

void CommandConfig::set_flag(const std::string& key, const std::string& value) {
  if (settings_.count(key) == 0) throw Error(ErrorKind::InvalidConfig, "unknown setting '" + key + "'");
  settings_[key] = {value, Provenance::flag};
}

const Setting& CommandConfig::at(const std::string& key) const {
  auto it = settings_.find(key);
  if (it == settings_.end()) throw Error(ErrorKind::InvalidConfig, "unknown setting '" + key + "'");
  return it->second;
}

double CommandConfig::real(const std::string& key) const {
  const std::string& v = text(key);
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) bad_value(key, v, "a real number");
  return out;
}

std::uint64_t CommandConfig::u64(const std::string& key) const {
  const std::string& v = text(key);
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::size_t CommandConfig::count(const std::string& key) const {
  return static_cast<std::size_t>(u64(key));
}

bool CommandConfig::boolean(const std::string& key) const {
  const std::string& v = text(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v, "a boolean");
}

std::vector<std::size_t> CommandConfig::counts(const std::string& key) const {
  const std::string& v = text(key);
  std::vector<std::size_t> out;
  std::istringstream in(v);
  std::string part;
  while (std::getline(in, part, ',')) {
    part = trim(part);
    std::size_t n = 0;
    const auto res = std::from_chars(part.data(), part.data() + part.size(), n);
    if (part.empty() || res.ec != std::errc() || res.ptr != part.data() + part.size()) {
      bad_value(key, v, "a comma-separated list of integers");
    }
    out.push_back(n);
  }
  return out;
}

std::string CommandConfig::describe() const {
  std::string out;
  for (const auto& [key, s] : settings_) {
    out += key + " = " + s.value + "  # " + to_string(s.source) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

}  // namespace

void add_train_defaults(CommandConfig& c) {
  const TrainConfig t;
  const NetworkConfig n;
  const KceConfig k;
  c.set_default("train_batch", std::to_string(t.train_batch));
  c.set_default("test_batch", std::to_string(t.test_batch));
  c.set_default("epochs", std::to_string(t.epochs));
  c.set_default("cls_lr", format_real(t.cls_lr));
  c.set_default("cls_step", std::to_string(t.cls_step));
  c.set_default("reg_lr", format_real(t.reg_lr));
  c.set_default("reg_step", std::to_string(t.reg_step));
  c.set_default("lr_factor", format_real(t.lr_factor));
  c.set_default("seed", std::to_string(t.seed));
  c.set_default("freeze_trunk", "false");
  c.set_default("beta", std::to_string(k.beta));
  c.set_default("k", std::to_string(k.k));
  c.set_default("tau_factor", format_real(k.tau_factor));
  c.set_default("fe_channels", join(n.fe_channels));
  c.set_default("afe1_channels", join(n.afe1_channels));
  c.set_default("afe2_channels", join(n.afe2_channels));
  c.set_default("afe1_centroids", std::to_string(n.afe1.n_centroids));
  c.set_default("afe1_k", std::to_string(n.afe1.k_group));
  c.set_default("afe2_centroids", std::to_string(n.afe2.n_centroids));
  c.set_default("afe2_k", std::to_string(n.afe2.k_group));
  c.set_default("radius", "auto");
  c.set_default("attention", to_string(n.attention));
  c.set_default("placement", to_string(n.placement));
  c.set_default("fe_attention", "false");
  c.set_default("head_widths", join(n.head_widths));
  c.set_default("dropout", format_real(n.dropout));
}

TrainConfig train_config_from(const CommandConfig& c, HeadKind stage) {
  TrainConfig t;
  t.train_batch = c.count("train_batch");
  t.test_batch = c.count("test_batch");
  t.epochs = c.count("epochs");
  t.cls_lr = c.real("cls_lr");
  t.cls_step = c.count("cls_step");
  t.reg_lr = c.real("reg_lr");
  t.reg_step = c.count("reg_step");
  t.lr_factor = c.real("lr_factor");
  t.seed = c.u64("seed");
  t.freeze_trunk = c.boolean("freeze_trunk");
  t.kce.beta = c.count("beta");
  t.kce.k = c.count("k");
  t.kce.tau_factor = c.real("tau_factor");
  NetworkConfig& n = t.network;
  n.fe_channels = c.counts("fe_channels");
  n.afe1_channels = c.counts("afe1_channels");
  n.afe2_channels = c.counts("afe2_channels");
  n.afe1.n_centroids = c.count("afe1_centroids");
  n.afe1.k_group = c.count("afe1_k");
  n.afe2.n_centroids = c.count("afe2_centroids");
  n.afe2.k_group = c.count("afe2_k");
  if (c.text("radius") == "auto") {
    n.set_radius(stage == HeadKind::classification ? NetworkConfig::kClassificationRadius
                                                   : NetworkConfig::kPredictionRadius);
  } else {
    n.set_radius(c.real("radius"));
  }
  n.attention = parse_attention(c.text("attention"));
  n.placement = parse_placement(c.text("placement"));
  n.fe_attention = c.boolean("fe_attention");
  const std::string& heads = c.text("head_widths");
  n.head_widths = heads.empty() ? std::vector<std::size_t>{} : c.counts("head_widths");
  n.dropout = c.real("dropout");
  t.validate();
  return t;
}

}  // namespace pcqa
