#include <iostream>

#include "mcan/cli.hpp"

int main(int argc, char** argv) { return mcan::cli::run(argc, argv, std::cout, std::cerr); }
