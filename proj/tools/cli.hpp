#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dcmg::cli {

enum ExitCode : int {
    ok = 0,
    infeasible = 2,  // also a denied plug request or a failed certificate
    input_error = 3,
    numerical_failure = 4,
};

// Runs one verb. Reports go to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dcmg::cli
