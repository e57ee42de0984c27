#include <iostream>

#include "gazesynth/cli.hpp"

int main(int argc, char** argv) { return gazesynth::cli_dispatch(argc, argv, std::cout, std::cerr); }
