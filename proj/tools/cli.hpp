#pragma once

#include <iosfwd>

namespace debgcd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Parses argv and runs one subcommand (synth, train, eval, inspect).
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace debgcd::cli
