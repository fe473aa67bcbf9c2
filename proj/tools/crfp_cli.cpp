#include "crfp/cli.hpp"

int main(int argc, char** argv) { return crfp::cli_main(argc, argv); }
