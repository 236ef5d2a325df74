#include <string>
#include <vector>

#include "postdrift/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return postdrift::cli::run(args);
}
