#include <iostream>

#include "cli_commands.hpp"

int main(int argc, char** argv) { return grf::cli::run_cli(argc, argv, std::cout, std::cerr); }
