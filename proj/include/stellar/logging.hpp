#pragma once

#include <cstdlib>
#include <iostream>
#include <string>

namespace stellar {

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

// Verbosity comes from STELLAR_LOG (error|warn|info|debug); default warn.
inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("STELLAR_LOG");
    if (env == nullptr) return LogLevel::Warn;
    const std::string s(env);
    if (s == "error") return LogLevel::Error;
    if (s == "info") return LogLevel::Info;
    if (s == "debug") return LogLevel::Debug;
    return LogLevel::Warn;
  }();
  return level;
}

inline void log_line(LogLevel level, const std::string& msg) {
  if (level <= log_level()) std::cerr << "[stellar] " << msg << "\n";
}

}  // namespace stellar
