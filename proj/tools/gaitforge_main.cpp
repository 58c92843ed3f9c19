#include "gaitforge/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return gaitforge::cli::run(argc, argv, std::cout, std::cerr); }
