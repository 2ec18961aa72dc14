#include <string>
#include <vector>

#include "rvq/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return rvq::cli::run_cli(std::move(args));
}
