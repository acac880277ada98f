#include "ttsem/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return ttsem::run_cli(argc, argv, std::cout, std::cerr); }
