#include <iostream>

#include "fer/cli.hpp"

int main(int argc, char** argv) { return fer::run_cli(argc, argv, std::cout, std::cerr); }
