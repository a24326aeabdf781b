#include <iostream>

#include "netequiv/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return netequiv::cli::run(args, std::cout, std::cerr);
}
