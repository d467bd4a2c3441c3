#include <iostream>

#include "dct/cli.hpp"

int main(int argc, char** argv) {
  return dct::run_cli(argc, argv, std::cout, std::cerr);
}
