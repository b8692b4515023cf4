// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "dsgd/cli.hpp"

int main(int argc, char** argv) { return dsgd::cli::main(argc, argv, std::cout, std::cerr); }
