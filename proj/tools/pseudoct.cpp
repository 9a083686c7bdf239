#include "pseudoct/cli.hpp"

int main(int argc, char** argv) { return pseudoct::cli::run(argc, argv); }
