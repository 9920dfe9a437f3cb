#include <iostream>

#include "advrep/cli/commands.hpp"

int main(int argc, char** argv) { return advrep::cli::run_cli(argc, argv, std::cout, std::cerr); }
