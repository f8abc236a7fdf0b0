#include "fedfusion/cli.hpp"

int main(int argc, char** argv) { return fedfusion::run_cli(argc, argv); }
