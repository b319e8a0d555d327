#include "chiptrap/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>

namespace chiptrap {

namespace {

LogLevel parse(const char* s) {
  if (!s) return LogLevel::Warn;
  const std::string v = s;
  if (v == "quiet" || v == "0") return LogLevel::Quiet;
  if (v == "error" || v == "1") return LogLevel::Error;
  if (v == "warn" || v == "2") return LogLevel::Warn;
  if (v == "info" || v == "3") return LogLevel::Info;
  if (v == "debug" || v == "4") return LogLevel::Debug;
  return LogLevel::Warn;
}

std::atomic<int>& level_store() {
  static std::atomic<int> level{static_cast<int>(parse(std::getenv("CHIPTRAP_LOG")))};
  return level;
}

const char* name(LogLevel l) {
  switch (l) {
    case LogLevel::Error: return "error";
    case LogLevel::Warn: return "warn";
    case LogLevel::Info: return "info";
    case LogLevel::Debug: return "debug";
    default: return "";
  }
}

}  // namespace

LogLevel log_level() { return static_cast<LogLevel>(level_store().load()); }

void set_log_level(LogLevel level) { level_store().store(static_cast<int>(level)); }

void log(LogLevel level, const std::string& message) {
  if (level == LogLevel::Quiet || static_cast<int>(level) > level_store().load()) return;
  static std::mutex m;
  std::lock_guard lock(m);
  std::cerr << "[" << name(level) << "] " << message << '\n';
}

}  // namespace chiptrap
