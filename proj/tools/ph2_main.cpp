// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0

#include "commands.h"

#include <iostream>

int
main(int argc, char **argv) {
    return ph2::cli::run(argc, argv, std::cout, std::cerr);
}
