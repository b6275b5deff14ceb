#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace fedquant::cli {

// Exit codes are a public contract; scripted sweeps depend on them.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfig = 2,
  kDiverged = 3,
  kIo = 4,
  kConditions = 5,
};

// Entry point shared by the `fedquant` binary and the tests. `args` excludes
// the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fedquant::cli
