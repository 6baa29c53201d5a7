#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace twoscale {

/// Exit codes: 0 success, 1 module error or failed validation, 2 bad
/// arguments or an unreadable/invalid model.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace twoscale
