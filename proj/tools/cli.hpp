#ifndef DCDA_TOOLS_CLI_HPP
#define DCDA_TOOLS_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace dcda::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kFailure = 2 };

/// Runs the dcda command line; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dcda::cli

#endif  // DCDA_TOOLS_CLI_HPP
