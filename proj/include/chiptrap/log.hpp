#pragma once

#include <string>

namespace chiptrap {

enum class LogLevel { Quiet = 0, Error = 1, Warn = 2, Info = 3, Debug = 4 };

/// Current level; read once from CHIPTRAP_LOG (quiet|error|warn|info|debug or 0-4),
/// default warn. set_log_level overrides it.
LogLevel log_level();
void set_log_level(LogLevel level);
/// Writes "[level] message" to stderr when `level` is enabled.
void log(LogLevel level, const std::string& message);

}  // namespace chiptrap
