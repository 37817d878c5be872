#include <iostream>

#include "srnr/cli.hpp"

int main(int argc, char** argv) { return srnr::cli::run(argc, argv, std::cout, std::cerr); }
