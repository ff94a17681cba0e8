#include "graphdqn/cli.hpp"

int main(int argc, char** argv) { return graphdqn::cli::cli_main(argc, argv); }
