#include <iostream>

#include "circuitbench/cli.hpp"

int main(int argc, char** argv) { return circuitbench::run_cli(argc, argv, std::cout, std::cerr); }
