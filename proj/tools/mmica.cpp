#include "mmica/runner.hpp"

int main(int argc, char** argv) { return mmica::cli_main(argc, argv); }
