#pragma once

#include <iosfwd>

namespace search_nne {

enum ExitCode { kExitOk = 0, kExitValidation = 2, kExitRuntime = 3 };

/// Runs the command line; returns an ExitCode.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace search_nne
