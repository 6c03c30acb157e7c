#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace duet {

/// Exit codes: 0 success (including per-change skips), 1 operational failure, 2 usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace duet
