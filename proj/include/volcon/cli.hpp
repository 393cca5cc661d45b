#pragma once

#include <string>
#include <vector>

namespace volcon {

// Runs one command; args exclude the program name. Returns the process exit
// code: 0 success, 2 usage or validation error, 3 numeric failure, 4 I/O
// failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace volcon
