#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace cfrate::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kValidationError = 1;
inline constexpr int kUsageError = 2;

// Runs one command line (without the program name). Results go to `out`, diagnostics
// and tables to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cfrate::cli
