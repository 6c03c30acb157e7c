#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

namespace duet {

struct CommandResult {
    int exit_code{-1}; // -1 when killed by a signal or timed out
    bool timed_out{false};
    std::string output; // stdout and stderr interleaved
};

/// Runs `argv` (PATH lookup on argv[0]) and captures its output.
/// Throws ToolMissing when the program cannot be executed.
CommandResult run_command(const std::vector<std::string>& argv,
                          std::optional<std::chrono::milliseconds> timeout = std::nullopt,
                          const std::vector<std::string>& extra_env = {});

} // namespace duet
