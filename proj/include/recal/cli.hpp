#pragma once

#include <string>
#include <vector>

namespace recal {

// Exit codes shared by every subcommand.
enum ExitCode : int {
  kExitOk = 0,
  kExitError = 1,         // file, parse or schema error; nothing written
  kExitPartial = 2,       // some records skipped; complete records written
  kExitDegenerate = 3,    // evaluation collapsed to a single bin; report written
};

// Entry point of the `recal` command line tool. args[0] is the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace recal
