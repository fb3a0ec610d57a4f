#include <iostream>

#include "stylespace/cli.hpp"

int main(int argc, char** argv) { return stylespace::run_cli(argc, argv, std::cout, std::cerr); }
