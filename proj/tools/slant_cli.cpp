#include <slant/cli.hpp>

int main(int argc, char** argv) { return slant::cli::run(argc, argv); }
