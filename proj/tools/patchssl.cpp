#include "patchssl/cli.hpp"

int main(int argc, char** argv) { return patchssl::run_cli(argc, argv); }
