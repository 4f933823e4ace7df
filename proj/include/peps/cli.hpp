#pragma once

#include <iosfwd>

namespace peps {

/// Exit codes of the command-line tool.
constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

/// Entry point of the `peps` tool. Subcommands: evolve, table, study, energy,
/// validate. Progress goes to `log`, results to files under --out.
int run_cli(int argc, const char* const* argv, std::ostream& log);

}  // namespace peps
