#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace musanet::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kDataError = 2,
  kNumericFailure = 3,
};

// Runs one subcommand. `args` excludes the program name. Results go to
// `out`, diagnostics and progress to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run_main(int argc, char** argv);

}  // namespace musanet::cli
