#include <string>
#include <vector>

#include "adazoom/cli.hpp"

int main(int argc, char** argv) {
    return adazoom::cli::run_command(std::vector<std::string>(argv + 1, argv + argc));
}
