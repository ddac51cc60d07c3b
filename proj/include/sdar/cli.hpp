#pragma once

#include <string>
#include <vector>

namespace sdar {

// Entry point shared by the sdar binary and in-process tests.
// Exit codes: 0 success, 1 config/runtime error, 2 usage error.
int cli_dispatch(const std::vector<std::string> & args);

}  // namespace sdar
