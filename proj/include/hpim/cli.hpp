#ifndef HPIM_CLI_HPP_
#define HPIM_CLI_HPP_

#include <ostream>
#include <string>
#include <vector>

namespace hpim::cli {

/// Exit statuses of the command-line tool.
enum ExitCode : int { kOk = 0, kValidationFailure = 1, kRuntimeError = 2 };

/// Environment variable naming the default CMD cache directory.
inline constexpr const char* kCacheDirEnv = "HPIM_CACHE_DIR";

/// Runs one command. args excludes the program name, e.g.
/// {"plan", "--codes", "codes.jsonl", ...}. Logs go to `log`; artifacts go
/// to the files named by the flags.
int run(const std::vector<std::string>& args, std::ostream& log);

}  // namespace hpim::cli

#endif  // HPIM_CLI_HPP_
