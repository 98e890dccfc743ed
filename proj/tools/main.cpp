#include <iostream>

#include "hlnet/cli.hpp"

int main(int argc, char** argv) { return hlnet::run_cli(argc, argv, std::cout, std::cerr); }
