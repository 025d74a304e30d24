#include "edras/cli.hpp"

int main(int argc, char** argv) { return edras::run_cli(argc, argv); }
