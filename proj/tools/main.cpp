#include "cli.hpp"

int main(int argc, char** argv) { return musanet::cli::run_main(argc, argv); }
