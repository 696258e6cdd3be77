#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bandtok {

// Process exit codes.
enum ExitCode : int {
    kExitOk = 0,
    kExitInvalidInput = 1,  // bad arguments, config errors, missing or unreadable files
    kExitFormat = 2,        // malformed BTOK / BMEL / BPRM / WAV contents
    kExitVerify = 3,        // a verify property failed
};

// Entry point shared by the binary and the tests. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bandtok
