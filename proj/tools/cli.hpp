#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace popusense::cli {

/// Process exit codes shared by every subcommand.
enum ExitCode : int {
  kOk = 0,
  kIoError = 1,
  kConfigError = 2,
  kNumericDivergence = 3,
};

/// Runs `popusense <subcommand> ...`; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace popusense::cli
