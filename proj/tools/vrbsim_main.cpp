#include "vrb/scenario_io.hpp"

int main(int argc, char** argv) { return vrb::run_cli(argc, argv); }
