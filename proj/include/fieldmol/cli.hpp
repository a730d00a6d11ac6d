#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fieldmol {

/// Runs one CLI command. args excludes the program name. Exit codes:
/// 0 ok, 1 validation error, 2 runtime error, 3 numerical abort.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fieldmol
