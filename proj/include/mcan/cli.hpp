#pragma once

#include <iosfwd>

namespace mcan::cli {

enum ExitCode : int { ok = 0, usage = 1, data = 2, runtime = 3 };

// Full command-line entry point; output goes to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mcan::cli
