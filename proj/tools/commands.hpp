#pragma once

#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

namespace promptinv::cli {

// Exit codes shared by every subcommand.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitBackend = 3;

/// Wires all subcommands into the app. Each returns one of the exit codes
/// above; thrown exceptions are mapped in main().
void register_commands(CLI::App& app, int& exit_code);

/// Loads the optional --config JSON file ({} when absent).
nlohmann::json load_run_config(const std::string& path);

}  // namespace promptinv::cli
