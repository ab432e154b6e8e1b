#include "tow/cli.hpp"

int main(int argc, char** argv) { return tow::run_cli(argc, argv); }
