#include "cli.hpp"

int main(int argc, char** argv) { return atalp::cli::run(argc, argv); }
