#include <string>
#include <vector>

#include "xalign_cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return xalign::cli::run_cli(args);
}
