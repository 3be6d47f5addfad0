#include <iostream>

#include "tandemscale/cli.hpp"

int main(int argc, char** argv) {
  return tandemscale::run_cli(argc, argv, std::cout, std::cerr);
}
