#include "lungddpm/cli.hpp"

int main(int argc, char** argv) { return lungddpm::cli::run_cli(argc, argv); }
