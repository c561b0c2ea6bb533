#include <string>
#include <vector>

#include "xview/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return xview::run_cli(args);
}
