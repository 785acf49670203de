#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace punr::cli {

// args excludes the program name. Returns the process exit code; errors are
// reported on `err` as one JSON line.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace punr::cli
