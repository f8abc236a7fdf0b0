#pragma once

namespace fedfusion {

// Entry point of the fedfusion command line tool. Returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace fedfusion
