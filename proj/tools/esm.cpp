#include "esm/cli.hpp"

int main(int argc, char** argv) { return esm::cli::run(argc, argv); }
