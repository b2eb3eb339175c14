#include "mcaol/cli.hpp"

int main(int argc, char** argv) { return mcaol::run_cli(argc, argv); }
