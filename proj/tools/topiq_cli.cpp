#include "cli.hpp"

int main(int argc, char** argv) { return topiq::cli::run(argc, argv); }
