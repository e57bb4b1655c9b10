#include <string>
#include <vector>

#include "lvae/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return lvae::run_cli(args);
}
