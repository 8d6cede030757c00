#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hug {

/// Entry point of the `hug` tool. Returns the process exit code; diagnostics
/// go to `err`, normal output to `out`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hug
