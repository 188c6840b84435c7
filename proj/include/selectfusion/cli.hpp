#pragma once

#include <iosfwd>

namespace selectfusion {

/// Exit codes of the command-line front end.
enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitUsage = 2 };

/// Parses `argv` (argv[0] is the program name) and runs one subcommand:
/// simulate | degrade | train | eval | report.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace selectfusion
