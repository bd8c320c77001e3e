#include <iostream>

#include "insertion/cli.hpp"

int main(int argc, char** argv) { return insertion::run_cli(argc, argv, std::cout, std::cerr); }
