#pragma once

#include <ostream>

namespace srnr::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kBadArgs = 2;
inline constexpr int kIoError = 3;
inline constexpr int kProcessingError = 4;

// Runs the srnr command line. Results go to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace srnr::cli
