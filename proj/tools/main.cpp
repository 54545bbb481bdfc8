#include "dsl_cli.hpp"

int main(int argc, char **argv) { return dsl::cli::cli_main(argc, argv); }
