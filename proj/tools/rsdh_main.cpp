#include <iostream>

#include "rsdh/cli.hpp"

int main(int argc, char** argv) { return rsdh::run_cli(argc, argv, std::cout, std::cerr); }
