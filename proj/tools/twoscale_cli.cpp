#include "twoscale/cli.hpp"

int main(int argc, char** argv) { return twoscale::run_cli(argc, argv); }
