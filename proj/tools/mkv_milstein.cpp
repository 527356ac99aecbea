#include <iostream>
#include <string>
#include <vector>

#include "mkv/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return mkv::run_cli(args, std::cout, std::cerr);
}
