#include <string>
#include <vector>

#include "lcq/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return lcq::run_cli(args);
}
