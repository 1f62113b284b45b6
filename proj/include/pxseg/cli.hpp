#pragma once

#include <string>
#include <vector>

namespace pxseg {

// Runs one CLI invocation. `args` excludes the program name, natural order.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.
int cli_main(const std::vector<std::string>& args);

} // namespace pxseg
