// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "vfa/cli.hpp"

int main(int argc, char** argv) { return vfa::run_cli(argc, argv, std::cout, std::cerr); }
