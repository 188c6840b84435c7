#include <iostream>

#include "selectfusion/cli.hpp"

int main(int argc, char** argv) { return selectfusion::run_cli(argc, argv, std::cout, std::cerr); }
