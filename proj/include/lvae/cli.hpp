#pragma once

#include <string>
#include <vector>

namespace lvae {

// Command-line front end. Subcommands:
//   generate | pretrain | train | verify-bounds | impute | predict | classify | metrics
// Exit codes: 0 success, 1 usage error, 2 runtime failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace lvae
