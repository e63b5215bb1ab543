#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dpocov/analysis.hpp"
#include "dpocov/core_types.hpp"
#include "dpocov/training.hpp"
#include "json.hpp"

namespace dpocov::cli {

enum ExitCode : int {
  kOk = 0,
  kValidation = 1,
  kNonConvergence = 2,
  kVerificationFailure = 3,
};

struct GlobalOptions {
  std::string config_path;              // empty: all defaults
  std::optional<std::uint64_t> seed;    // overrides the config seed
  std::filesystem::path out_dir = ".";
  unsigned threads = 1;
  bool allow_nonconverged = false;
  std::optional<Setting> setting;       // train / sweep
  std::size_t trials = 100000;          // verify
  bool quiet = false;
};

struct CommandResult {
  int exit_code = kOk;
  std::vector<std::filesystem::path> artifacts;
  std::string message;
};

struct SweepConfig {
  std::vector<Setting> settings{Setting::kOffline};
  std::vector<std::size_t> n_values;
  std::vector<std::uint64_t> seeds;
  std::vector<double> lambdas;  // empty: the hyperparams value
  std::vector<double> omegas;
  std::vector<double> etas;     // empty with theorem_eta
  bool theorem_eta = true;
  double delta = 0.1;
  std::size_t coverability_family = 256;
};

struct Config {
  std::uint64_t seed = 0;
  Instance instance;
  std::string dataset_path;  // offline train: read samples instead of generating
  std::size_t n = 1000;
  CorruptionSpec corruption;
  Hyperparams hp;
  std::string preset;        // empty when no preset was named
  OptimizerSettings optimizer;
  std::size_t T = 256;
  OnlineOptions online;
  Setting setting = Setting::kOffline;
  SweepConfig sweep;
};

// Parses a config document. Relative paths resolve against `base_dir`.
// Throws ValidationError naming the offending field path.
Config parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
Config load_config(const GlobalOptions& opts);

// Preset names: vanilla-dpo, robust-dpo, pessimistic-dpo, length-dpo, dpo-cov.
Hyperparams preset(const std::string& name);
const std::vector<std::string>& preset_names();

// Name of the preset whose regulariser pattern (lambda < 1, eta > 0, omega > 0)
// matches hp, or "custom".
std::string preset_label(const Hyperparams& hp);

CommandResult cmd_gen(const GlobalOptions& opts);
CommandResult cmd_train(const GlobalOptions& opts);
CommandResult cmd_sweep(const GlobalOptions& opts);
CommandResult cmd_verify(const GlobalOptions& opts);

// Full command line entry point; returns the process exit code.
int run(int argc, char** argv);

}  // namespace dpocov::cli
