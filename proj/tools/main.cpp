#include "cli.hpp"

int main(int argc, char** argv) { return xastruct::cli::RunCli(argc, argv); }
