#include "xcap/cli.hpp"

int main(int argc, char** argv) { return xcap::run_cli(argc, argv); }
