#include "xseg/cli.hpp"

int main(int argc, char** argv) { return xseg::run_cli(argc, argv); }
