#include <vector>

#include "vld/cli.hpp"

int main(int argc, char** argv) {
    return vld::run_command(std::vector<std::string>(argv + 1, argv + argc));
}
