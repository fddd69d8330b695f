#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace eyedex::cli {

enum ExitCode : int { ok = 0, usage = 2, numeric = 3, io = 4 };

// Runs one command; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace eyedex::cli
