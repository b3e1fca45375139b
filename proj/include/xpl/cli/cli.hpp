#pragma once

#include <ostream>

namespace xpl::cli {

// Exit statuses.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kDataError = 2;
inline constexpr int kCheckpointError = 3;

// Runs one subcommand. Results go to `out`, the resolved configuration and
// progress to `log`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& log);

}  // namespace xpl::cli
