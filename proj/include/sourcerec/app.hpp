#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "sourcerec/config.hpp"

namespace sourcerec {

/// Parsed command line of the batch CLI.
struct CliOptions {
  std::string command;  ///< simulate | krige | mcmc | accuracy | st-demo
  std::string config_path;
  std::optional<std::uint64_t> seed;     ///< overrides the `seed` key
  std::optional<int> workers;            ///< overrides the `workers` key
  std::optional<std::string> out_dir;    ///< overrides the `out` key
};

/// Runs one batch command end to end and returns the process exit code:
/// 0 success, 2 configuration/input error, 3 numerical failure.
int run_command(const CliOptions& opts);

/// Same, for an already-parsed configuration (unit-test entry point).
int run_command(const CliOptions& opts, ConfigMap cfg);

/// Severity levels of the stderr log; the active level comes from the
/// SOURCEREC_LOG environment variable (error | info | debug, default info).
enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };
void log_message(LogLevel level, const std::string& text);

}  // namespace sourcerec
