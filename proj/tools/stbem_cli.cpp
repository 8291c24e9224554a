#include "stbem/cli.hpp"

int main(int argc, char** argv) { return stbem::cli::run(argc, argv); }
