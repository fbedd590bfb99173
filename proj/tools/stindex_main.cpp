#include "stindex/cli.hpp"

int main(int argc, char** argv) { return stindex::run_cli(argc, argv); }
