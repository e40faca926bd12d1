#include "eikf/cli.hpp"

int main(int argc, char** argv) { return eikf::cli::run(argc, argv); }
