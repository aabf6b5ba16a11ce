#pragma once

#include <iosfwd>

namespace idistill::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;

/// Entry point shared by the executable and the tests. Returns the process
/// exit code: 0 success, 1 usage/validation error, 2 I/O error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace idistill::cli
