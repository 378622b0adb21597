#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace gema::cli {

/// Runs the command line; returns 0 on success, 1 on usage errors, 2 on runtime failures.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gema::cli
