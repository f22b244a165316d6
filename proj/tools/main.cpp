#include "cli.hpp"

int main(int argc, char** argv) { return nonconj::cli::run_cli(argc, argv); }
