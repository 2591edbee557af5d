#pragma once
#include <string>
#include <vector>

namespace lcq {

// Command-line surface. Subcommands: gen, quantize, eval, gradcheck,
// inspect, oracle. Returns the process exit code: 0 success, 1 numerical
// failure, 2 usage/config/file errors.
int run_cli(const std::vector<std::string>& args);

}  // namespace lcq
