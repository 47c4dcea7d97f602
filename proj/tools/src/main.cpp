#include "timely/cli/app.hpp"

int main(int argc, char** argv) { return timely::cli::run(argc, argv); }
