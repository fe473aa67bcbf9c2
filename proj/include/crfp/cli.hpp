#pragma once

namespace crfp {

// Full command-line surface; returns the process exit code
// (0 ok, 1 runtime failure, 2 usage/config error).
int cli_main(int argc, char** argv);

}  // namespace crfp
