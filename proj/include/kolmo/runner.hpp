#pragma once

#include <cstdint>
#include <json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

namespace kolmo {

/// Config rejected before any computation (exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A module failed while a stage was running (exit code 1).
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& check, const std::string& what)
      : std::runtime_error("stage " + stage + " (" + check + "): " + what), stage(stage), check(check) {}
  std::string stage;
  std::string check;
};

/// Checks a config may request, in execution order.
const std::vector<std::string>& runnable_checks();
/// Stage of a runnable check: audit, pde, kernel, estimates, semilinear or fbsde.
std::string check_stage(const std::string& check);

/// 64-bit FNV-1a of the compact JSON dump (keys sorted).
std::uint64_t config_hash(const nlohmann::json& config);
std::string hash_hex(std::uint64_t h);

struct RunConfig {
  nlohmann::json config;  // as given, without "output"
  std::string output;
  std::uint64_t seed = 1;
  std::vector<std::string> checks;  // sorted by stage
  bool allow_inconclusive = false;

  /// Validates the whole schema; throws ConfigError.
  static RunConfig parse(const nlohmann::json& j);
};

/// Reads a config file. A stored summary.json is accepted too: its embedded
/// config is returned after the hash is verified.
nlohmann::json load_config(const std::string& path);

struct CheckRecord {
  std::string stage;
  std::string check;
  std::string verdict;  // PASS, FAIL or INCONCLUSIVE
  nlohmann::json values;
};

struct RunResult {
  std::vector<CheckRecord> checks;
  std::vector<std::string> files;  // relative to the output directory
  bool ok = false;
  nlohmann::json summary;
};

/// Runs the requested checks in stage order and writes the report tree.
/// With audit_only, only the audit stage runs (all audit checks when none are requested).
RunResult run_config(const RunConfig& cfg, bool audit_only = false);

struct PresetInfo {
  std::string family;
  std::vector<std::string> constraints;
  nlohmann::json defaults;
};
std::vector<PresetInfo> list_presets();
std::string presets_table();

}  // namespace kolmo
