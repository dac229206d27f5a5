#pragma once

#include <string>
#include <vector>

namespace xcap {

// Runs one CLI invocation. `args` excludes the program name. Returns the
// process exit code: 0 success, 1 runtime/data error, 2 usage error.
int run_cli(const std::vector<std::string>& args);

int run_cli(int argc, char** argv);

}  // namespace xcap
