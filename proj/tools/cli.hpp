#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace bop::cli {

inline constexpr const char* kToolVersion = "0.1.0";

// Runs one invocation; `args` excludes the program name. Returns the process
// exit code: 0 when every output was written, 2 for usage and validation
// errors, 1 for numerical and internal errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bop::cli
