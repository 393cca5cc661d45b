#include <string>
#include <vector>

#include "volcon/cli.hpp"

int main(int argc, char** argv) {
    return volcon::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
