#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace doge::cli {

enum ExitCode : int { ok = 0, internal_error = 1, bad_input = 2 };

// Parses `args` (args[0] is the program name) and runs the subcommand.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace doge::cli
