#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace teller::cli {

// Runs one `teller` invocation. args[0] is the program name. Data paths go to
// `out`, diagnostics to `err`. Returns 0 on success, 2 on usage errors and 1
// on runtime failures.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace teller::cli
