#pragma once

#include <filesystem>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rsdh/network.hpp"
#include "rsdh/trainer.hpp"

namespace rsdh {

/// Bad configuration or arguments; the CLI maps it to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigKey {
  const char* key;
  const char* default_value;
  const char* help;
};

/// Every key accepted in a config file, with its default.
const std::vector<ConfigKey>& config_keys();

/// Flat key=value settings. Later layers override earlier ones:
/// built-in defaults, then the config file, then command-line flags.
class Settings {
 public:
  Settings();

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool is_set_explicitly(const std::string& key) const;

  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  ModelConfig model_config() const;
  TrainConfig train_config() const;
  HazeOptions haze_options() const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> explicit_;
};

/// Parses "key = value" lines; blank lines and '#' comments are skipped.
/// Unknown keys and malformed lines throw ConfigError naming `source` and
/// the line number.
std::map<std::string, std::string> parse_config(std::istream& in, const std::string& source);
std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path);

/// Entry point of the `rsdh` tool. Exit codes: 0 success, 1 configuration
/// or input error, 2 numerical failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rsdh
