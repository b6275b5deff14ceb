#include <iostream>
#include <string>
#include <vector>

#include "fedquant/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return fedquant::cli::run_cli(args, std::cout, std::cerr);
}
