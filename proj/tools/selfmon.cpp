#include <iostream>

#include "selfmon/cli.hpp"

int main(int argc, char** argv) { return selfmon::cli::run(argc, argv, std::cout, std::cerr); }
