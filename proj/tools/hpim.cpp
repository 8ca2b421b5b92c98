#include <iostream>
#include <string>
#include <vector>

#include "hpim/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return hpim::cli::run(args, std::cerr);
}
