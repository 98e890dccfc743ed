#pragma once

#include <iosfwd>

namespace hlnet {

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,
  kExitData = 3,
  kExitNumeric = 4,
};

/// Subcommands gen, train, eval and infer. Normal output goes to out,
/// diagnostics to err.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hlnet
