#include "trukan/cli.hpp"

int main(int argc, char** argv) { return trukan::cli::run(argc, argv); }
