// SPDX-License-Identifier: Apache-2.0
#include <recheck/cli.hpp>

#include <iostream>

int main(int argc, char** argv) { return recheck::cli::run_cli(argc, argv, std::cout, std::cerr); }
