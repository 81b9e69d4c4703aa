#include "cli.hpp"

int main(int argc, char** argv) { return exchanger::cli_main(argc, argv); }
