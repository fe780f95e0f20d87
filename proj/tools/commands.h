// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0
//
// The ph2 command line. Kept as a library so tests can drive it in-process.
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ph2::cli {

/// Exit codes: 0 ok, 2 invalid input, 3 numerical failure, 4 resource cap,
/// 1 anything else.
int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

/// Convenience for tests: argv[0] is supplied.
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

} // namespace ph2::cli
