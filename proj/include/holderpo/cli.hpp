#pragma once

// Command-line front end: mean, train, sweep, verify.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 verification
// failure, 3 divergence abort.

#include <iosfwd>
#include <string>
#include <vector>

namespace holderpo {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitVerifyFailed = 2;
inline constexpr int kExitDiverged = 3;

std::string version_string();

// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Worker count for sweeps: HOLDERPO_THREADS when set to a positive integer,
// else 1; capped at 64.
unsigned worker_threads_from_env();

}  // namespace holderpo
