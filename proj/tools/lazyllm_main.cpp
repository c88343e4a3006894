#include "lazyllm/cli.hpp"

int main(int argc, char** argv) { return lazyllm::cli::main(argc, argv); }
