#include <iostream>

#include "cli/commands.hpp"

int main(int argc, char** argv) { return bt::cli::run(argc, argv, std::cout, std::cerr); }
