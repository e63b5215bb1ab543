#include "dpocov/cli.hpp"

int main(int argc, char** argv) { return dpocov::cli::run(argc, argv); }
