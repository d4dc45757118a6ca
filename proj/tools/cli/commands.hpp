#pragma once

#include <functional>

#include "CLI11.hpp"

namespace probekit::cli {

/// Registers every subcommand on `app`. After parsing, `action` holds the
/// work of whichever subcommand was selected.
void register_commands(CLI::App& app, std::function<void()>& action);

}  // namespace probekit::cli
