#include "plume/cli.hpp"

int main(int argc, char** argv) { return plume::cli::run_cli(argc, argv); }
