#pragma once

namespace xseg {

// Entry point behind the xseg binary. Exit codes: 0 success, 1 check failure
// (gradcheck), 2 usage/config/data problems, 3 filesystem refusal, 4 numeric
// failure.
int run_cli(int argc, const char* const* argv);

}  // namespace xseg
