#include "ccbm/cli.hpp"

int main(int argc, char** argv) { return ccbm::run_cli(argc, argv); }
