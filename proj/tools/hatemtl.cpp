#include <iostream>
#include <string>
#include <vector>

#include "hatemtl/workspace.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return hatemtl::run_cli(args, std::cout, std::cerr);
}
