#include <iostream>

#include "hpo/cli.hpp"

int main(int argc, char** argv) { return hpo::run_cli(argc, argv, std::cout, std::cerr); }
