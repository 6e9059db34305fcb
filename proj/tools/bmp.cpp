#include <iostream>

#include "bmp/cli.hpp"

int main(int argc, char** argv) { return bmp::cli::run(argc, argv, std::cout, std::cerr); }
