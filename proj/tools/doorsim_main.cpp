#include <iostream>

#include "doorsim/cli.hpp"

int main(int argc, char** argv) { return doorsim::run_cli(argc, argv, std::cout, std::cerr); }
