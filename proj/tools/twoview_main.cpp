#include "twoview/cli.hpp"

int main(int argc, char** argv) { return twoview::run_cli(argc, argv); }
