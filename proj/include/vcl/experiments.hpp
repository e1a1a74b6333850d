#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace vcl::lab {

/// Bad config, unknown key, or unusable input. Maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kExitPass = 0;
inline constexpr int kExitCheckFailure = 1;
inline constexpr int kExitUsage = 2;

struct CommandResult {
  int exit_code = kExitPass;
  /// Full report.json contents (resolved config, seed, results, checks).
  std::string report_json;
  /// Human-readable one-line-per-check summary.
  std::string summary;
};

/// stats-verify, gmm-phase, train, activation-hist, bound-check.
[[nodiscard]] const std::vector<std::string>& command_names();

/// Default config of a subcommand as pretty-printed JSON.
[[nodiscard]] std::string default_config(const std::string& command);

/// Runs one subcommand. `config_json` is merged over the defaults (unknown
/// keys rejected); `seed` overrides the config's seed. Writes report.json and
/// data tables into `out_dir`. Throws ConfigError for usage problems.
[[nodiscard]] CommandResult run_command(const std::string& command, const std::string& config_json,
                                        const std::string& out_dir, std::optional<std::uint64_t> seed = std::nullopt);

}  // namespace vcl::lab
