#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace chromavib {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

/// Runs the command line `args` (args[0] is the program name). Machine output
/// goes to `out` as one JSON record per line, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace chromavib
