#include "dpa/cli.hpp"

int main(int argc, char** argv) { return dpa::run_cli(argc, argv); }
