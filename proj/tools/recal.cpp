#include <string>
#include <vector>

#include "recal/cli.hpp"

int main(int argc, char** argv) {
  return recal::run_cli(std::vector<std::string>(argv, argv + argc));
}
