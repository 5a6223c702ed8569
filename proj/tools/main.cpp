#include <iostream>

#include "search_nne/cli.hpp"

int main(int argc, char** argv) { return search_nne::run_cli(argc, argv, std::cout, std::cerr); }
