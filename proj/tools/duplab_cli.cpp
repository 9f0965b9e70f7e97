#include "duplab/harness.hpp"

int main(int argc, char** argv) { return duplab::cli_main(argc, argv); }
