#include "cli.hpp"

int main(int argc, char** argv) { return lbi::cli::run_cli(argc, argv); }
