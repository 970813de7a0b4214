#include "stilt/cli.hpp"

int main(int argc, char** argv) { return stilt::run_cli(argc, argv); }
