#include "cli.hpp"

int main(int argc, char** argv) { return aqse::cli::dispatch(argc, argv); }
