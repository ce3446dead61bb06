#include "moefn/cli.hpp"

int main(int argc, char** argv) { return moefn::cli::run(argc, argv); }
