#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ris {

/// Entry point of the `ris` tool: results on `out`, diagnostics on `err`.
/// Returns 0 on success, 1 on usage errors, 2 on data errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ris
