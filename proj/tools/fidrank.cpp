#include "fidrank/cli/app.hpp"

int main(int argc, char** argv) { return fidrank::cli::run(argc, argv); }
