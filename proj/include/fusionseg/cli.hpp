#pragma once

namespace fusionseg {

// Entry point behind the fusionseg binary; exposed for in-process testing.
// Returns 0 on success, 1 on validation/usage errors, 2 on runtime failures.
int cli_main(int argc, char** argv);

}  // namespace fusionseg
