#include <iostream>

#include "lodl/cli/commands.hpp"

int main(int argc, char** argv) { return lodl::cli::run(argc, argv, std::cout, std::cerr); }
