// vcl-lab <subcommand> --config <path> [--out <dir>] [--seed <int>]

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "vcl/experiments.hpp"

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool print_defaults = false;
  bool quiet = false;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw vcl::lab::ConfigError("cannot read config " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variance constancy loss lab: oracles, phase experiments, training and bound checks"};
  app.require_subcommand(1);
  app.fallthrough(false);

  Options opts;
  std::string chosen;
  for (const auto& name : vcl::lab::command_names()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", opts.config, "JSON config (defaults when omitted)");
    sub->add_option("--out", opts.out, "Output directory (default: vcl_out/<subcommand>)");
    sub->add_option("--seed", opts.seed, "Overrides the config seed");
    sub->add_flag("--print-defaults", opts.print_defaults, "Print the default config and exit");
    sub->add_flag("-q,--quiet", opts.quiet, "Only print the final status line");
    sub->callback([&chosen, name] { chosen = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return vcl::lab::kExitUsage;
  }

  try {
    if (opts.print_defaults) {
      std::cout << vcl::lab::default_config(chosen) << '\n';
      return vcl::lab::kExitPass;
    }
    const std::string text = opts.config.empty() ? std::string() : read_file(opts.config);
    const std::string out = opts.out.empty() ? "vcl_out/" + chosen : opts.out;
    const auto result = vcl::lab::run_command(chosen, text, out, opts.seed);
    if (!opts.quiet) std::cout << result.summary;
    std::cout << (result.exit_code == vcl::lab::kExitPass ? "PASSED" : "FAILED") << " (" << chosen << ", report "
              << out << "/report.json)\n";
    return result.exit_code;
  } catch (const vcl::lab::ConfigError& e) {
    std::cerr << "vcl-lab: config error: " << e.what() << '\n';
    return vcl::lab::kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "vcl-lab: " << e.what() << '\n';
    return vcl::lab::kExitCheckFailure;
  }
}
