#include <iostream>

#include "equicaps/cli.hpp"

int main(int argc, char** argv) { return equicaps::run_cli(argc, argv, std::cout, std::cerr); }
