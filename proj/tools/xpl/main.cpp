#include <iostream>

#include "xpl/cli/cli.hpp"

int main(int argc, char** argv) { return xpl::cli::run(argc, argv, std::cout, std::cerr); }
