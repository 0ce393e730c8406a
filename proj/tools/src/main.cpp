#include <iostream>
#include <string>
#include <vector>

#include "cpl_cli/commands.hpp"

int main(int argc, char** argv) {
  return cpl::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
