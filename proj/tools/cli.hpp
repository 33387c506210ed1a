#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace sdaut {

/// Runs one command line (without the program name). Returns the exit code;
/// diagnostics go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sdaut
