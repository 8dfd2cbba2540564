#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace storylab {

/// Exit codes of the storylab binary.
enum ExitCode : int { kExitOk = 0, kExitOther = 1, kExitConfig = 2, kExitData = 3, kExitNumeric = 4 };

/// Runs `storylab <args...>`. args excludes the program name. Failures print a
/// single line "error[<kind>]: <message>" to err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace storylab
