#include "chiptrap/cli.hpp"

int main(int argc, char** argv) { return chiptrap::cli_main(argc, argv); }
