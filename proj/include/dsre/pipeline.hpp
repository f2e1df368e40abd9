#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsre/corrector.hpp"
#include "dsre/environment.hpp"

namespace dsre {

inline constexpr int kConfigFormatVersion = 1;

struct SimulationOptions {
  std::vector<double> times{100.0, 400.0};
  std::size_t n_walks = 10000;
  std::uint64_t seed = 0;
  Site x0 = 0;
};

struct HeatKernelOptions {
  std::vector<double> times;  ///< empty: 30 log-spaced points in [0.1, t_wrap]
  double tail_tol = 1e-13;
  Site x0 = 0;
};

struct DiagnosticsOptions {
  /// Entropy-production constant b; NaN selects the numerically minimised value.
  double entropy_constant = std::numeric_limits<double>::quiet_NaN();
  double entropy_rel_step = 1e-2;
  double ks_threshold = 0.0;  ///< 0 selects 1.63/sqrt(n)
  double cov_tolerance = 0.07;
  double eps = 1.0;
  std::vector<int> radii{4, 8, 12, 16};
  std::vector<double> sublinearity_eps{0.05, 0.1};
};

struct ExperimentConfig {
  int format_version = kConfigFormatVersion;
  GeneratorSpec environment;
  SolverOptions solver;
  SimulationOptions simulation;
  HeatKernelOptions heat_kernel;
  DiagnosticsOptions diagnostics;
  std::string output_dir = "dsre_out";
  nlohmann::json source;  ///< the parsed document, for hashing

  /// Throws PreconditionError naming the offending JSON path.
  static ExperimentConfig from_json(const nlohmann::json& j);
};

struct RunOptions {
  std::optional<std::uint64_t> seed;             ///< overrides environment.seed
  std::optional<std::filesystem::path> output_dir;  ///< overrides DSRE_OUTPUT_DIR and the config
  int threads = 1;
};

struct RunResult {
  int exit_code = 2;  ///< 0 all verdicts pass, 1 a verdict failed, 2 execution error
  nlohmann::json manifest;
  std::string message;
};

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"gen-env",   "solve-corrector", "heat-kernel", "simulate",
                                              "verify-clt", "nash-diag",       "full"};
  return names;
}

/// Runs one subcommand. Never throws for configuration or numerical errors;
/// those become exit code 2 with the message in the manifest.
RunResult run_experiment(const nlohmann::json& config, const std::string& subcommand, const RunOptions& opts);
RunResult run_experiment(const std::filesystem::path& config_path, const std::string& subcommand,
                         const RunOptions& opts);

/// FNV-1a of a file's bytes.
std::uint64_t file_hash(const std::filesystem::path& p);

}  // namespace dsre
