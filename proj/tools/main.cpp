#include "dbal/cli.hpp"

int main(int argc, char** argv) { return dbal::cli::main(argc, argv); }
