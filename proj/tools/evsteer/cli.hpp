#pragma once

#include <filesystem>
#include <iosfwd>

namespace evsteer::cli {

// Stable exit codes.
enum ExitCode : int { kOk = 0, kValidationError = 1, kIoError = 2 };

// Entry point shared by the executable and the tests. `default_config` is
// loaded (when it exists) before --config and command-line flags.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err,
        const std::filesystem::path& default_config = {});

} // namespace evsteer::cli
