#pragma once

#include <iosfwd>

namespace doorsim {

/// Process exit codes of the doorsim command.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,   // anything not covered below
  kExitUsage = 2,     // unknown flag, bad flag value
  kExitIo = 3,        // missing or unreadable file
  kExitSchema = 4,    // malformed file or version mismatch
  kExitNumerical = 5, // non-finite state or loss
  kExitContract = 6,  // invalid request, e.g. dimension mismatch
};

/// Runs the command line. Normal output goes to `out`; on failure a single
/// JSON line {"error": kind, "exit_code": n, "message": ...} goes to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace doorsim
