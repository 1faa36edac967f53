#include <iostream>

#include "batchcur/cli.hpp"

int main(int argc, char** argv) { return batchcur::run_cli(argc, argv, std::cout, std::cerr); }
