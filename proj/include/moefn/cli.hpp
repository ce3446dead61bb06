#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace moefn::cli {

/// Exit codes of run().
inline constexpr int kExitOk = 0;
inline constexpr int kExitNumerical = 1;
inline constexpr int kExitConfig = 2;

/// Parses `args` (without the program name) and runs one subcommand. Results
/// go to --out when given, otherwise to `out`; diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, char** argv);

}  // namespace moefn::cli
