#include <iostream>

#include "fedplatoon/commands.hpp"

int main(int argc, char** argv) { return fedplatoon::run_cli(argc, argv, std::cout, std::cerr); }
