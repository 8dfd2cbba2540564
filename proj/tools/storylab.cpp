#include <iostream>

#include "storylab/cli.hpp"

int main(int argc, char** argv) {
  return storylab::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
