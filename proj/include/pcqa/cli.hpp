#pragma once

// Settings resolution for the command-line tool: every effective value
// remembers whether it came from a default, a config file or a flag.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pcqa/network.hpp"
#include "pcqa/trainer.hpp"

namespace pcqa {

enum class Provenance { default_value, config_file, flag };

std::string to_string(Provenance p);

struct Setting {
  std::string value;
  Provenance source = Provenance::default_value;
};

class CommandConfig {
 public:
  std::string subcommand;

  void set_default(const std::string& key, const std::string& value);
  // `key = value` lines; '#' starts a comment. Keys must already have a
  // default (InvalidConfig otherwise). A flag already set is not overridden.
  void apply_file(const std::filesystem::path& path);
  void apply_text(const std::string& text, const std::string& origin = "config");
  void set_flag(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return settings_.count(key) != 0; }
  const Setting& at(const std::string& key) const;
  const std::string& text(const std::string& key) const { return at(key).value; }
  double real(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  bool boolean(const std::string& key) const;
  std::vector<std::size_t> counts(const std::string& key) const;  // comma separated

  // "key = value  # provenance" lines in key order.
  std::string describe() const;

  const std::map<std::string, Setting>& settings() const { return settings_; }

 private:
  std::map<std::string, Setting> settings_;
};

// Defaults of every key understood by `train`. radius = auto resolves to the
// task default of the stage.
void add_train_defaults(CommandConfig& config);
TrainConfig train_config_from(const CommandConfig& config, HeadKind stage);

}  // namespace pcqa
