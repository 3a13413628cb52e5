#include "saot/tracker.hpp"

int main(int argc, char** argv) { return saot::cli_main(argc, argv); }
