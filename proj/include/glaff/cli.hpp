// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace glaff::cli {

/// Exit statuses.
inline constexpr int kOk = 0;
inline constexpr int kRuntimeError = 1;
inline constexpr int kUsageError = 2;

/// Runs one invocation; `args` excludes the program name. Progress goes to
/// `err`, results and help to `out`. Failures print a single line
/// "error: <category>: <message>" to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace glaff::cli
