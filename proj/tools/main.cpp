#include "fusionseg/cli.hpp"

int main(int argc, char** argv) { return fusionseg::cli_main(argc, argv); }
