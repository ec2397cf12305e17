#include "mvrisk/cli/commands.hpp"

int main(int argc, char** argv) { return mvrisk::cli::run_cli(argc, argv); }
