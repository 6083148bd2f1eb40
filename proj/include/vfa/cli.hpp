// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>

namespace vfa {

/// Entry point of the `vfa` tool: analyze | fi | compare. Returns the process
/// exit code; 0 only when the report was fully written.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace vfa
