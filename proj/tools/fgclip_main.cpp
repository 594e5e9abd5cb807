#include "fgclip/cli.hpp"

int main(int argc, char** argv) { return fgclip::cli::run(argc, argv); }
