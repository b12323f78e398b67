#pragma once

#include <iosfwd>

namespace circuitbench {

/// The circuitbench command line. Returns the process exit code:
/// 0 success, 2 configuration error, 3 missing upstream artifact,
/// 4 non-finite numeric result, 1 anything else.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace circuitbench
