#pragma once

namespace xastruct::cli {

/// Exit codes: 0 success, 1 runtime or validation failure, 2 usage error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point behind the `xastruct` binary.
int RunCli(int argc, char** argv);

}  // namespace xastruct::cli
