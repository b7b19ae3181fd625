#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace chartlab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Runs one subcommand. `args` excludes the program name. Progress goes to
/// `out`, diagnostics and usage to `err`.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace chartlab::cli
