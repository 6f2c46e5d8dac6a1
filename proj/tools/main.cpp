#include "pointresnet/cli.hpp"

int main(int argc, char** argv) { return pointresnet::cli::cli_main(argc, argv); }
