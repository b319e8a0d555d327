#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace chiptrap {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitNoTrap = 3, kExitPartial = 4 };

struct RunOptions {
  std::string command;
  std::filesystem::path scenario;
  std::filesystem::path out = "chiptrap_out";
  std::optional<std::uint64_t> seed;  // overrides the scenario seed
  int threads = 1;
  bool dry_run = false;
};

const std::vector<std::string>& cli_commands();

/// Runs one command; tables go to `out`, diagnostics to `err`. Returns the exit code.
int run_command(const RunOptions& options, std::ostream& out, std::ostream& err);

/// Argument parsing front end used by the executable.
int cli_main(int argc, char** argv);

}  // namespace chiptrap
