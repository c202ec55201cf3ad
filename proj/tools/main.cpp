#include "skincnn/cli.hpp"

int main(int argc, char** argv)
{
    return skincnn::run_command(std::vector<std::string>(argv + 1, argv + argc));
}
