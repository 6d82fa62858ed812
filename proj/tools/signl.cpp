#include "signl/cli.hpp"

int main(int argc, char** argv) { return signl::run_main(argc, argv); }
