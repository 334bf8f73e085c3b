#include "capgen/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return capgen::run_cli(argc, argv, std::cout, std::cerr); }
