#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lazyllm::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kInvariant = 2, kIo = 3 };

/// Runs the command line `args` (without the program name). Text output goes
/// to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int main(int argc, char** argv);

}  // namespace lazyllm::cli
