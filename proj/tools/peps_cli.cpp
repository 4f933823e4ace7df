#include <iostream>

#include "peps/cli.hpp"

int main(int argc, char** argv) { return peps::run_cli(argc, argv, std::cerr); }
