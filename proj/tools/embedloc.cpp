#include <iostream>
#include <string>
#include <vector>

#include "embedloc/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return embedloc::run_cli(args, std::cout, std::cerr);
}
