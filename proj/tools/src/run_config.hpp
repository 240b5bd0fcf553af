#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lensless/datasetgen.hpp"
#include "lensless/enhance.hpp"
#include "lensless/recon.hpp"

namespace lensless::cli {

/// Bad flags, unknown config keys, malformed values.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat dotted-key configuration. Every key is declared up front with a
/// typed default; a JSON file (nested objects) and `key=value` overrides may
/// only set declared keys.
class RunConfig {
 public:
  RunConfig();

  void load_file(const std::filesystem::path& path);
  void set(std::string_view assignment);

  double number(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t seed(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::string text(const std::string& key) const;

  /// "key (default)" lines for help output.
  std::string describe() const;
  nlohmann::ordered_json to_json() const;

  SensorParams sensor() const;
  CaptureSettings capture() const;
  DatasetConfig dataset() const;
  WienerConfig wiener() const;
  AdmmConfig admm() const;
  Stage2Config stage2() const;
  Stage2TrainConfig train() const;

 private:
  struct Entry {
    nlohmann::ordered_json value;
    std::string help;
  };
  void declare(const std::string& key, nlohmann::ordered_json value, std::string help);
  void assign(const std::string& key, nlohmann::ordered_json value);
  void flatten(const nlohmann::ordered_json& node, const std::string& prefix);
  const nlohmann::ordered_json& at(const std::string& key) const;

  std::map<std::string, Entry> entries_;
};

}  // namespace lensless::cli
