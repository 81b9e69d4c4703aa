#pragma once

namespace exchanger {

// Entry point of the `exchanger` binary, callable in-process by tests.
// Returns the process exit code: 0 success, 1 configuration error,
// 2 data/format error, 3 numerical failure.
int cli_main(int argc, const char* const* argv);

}  // namespace exchanger
