#pragma once

#include <cstdio>
#include <cstdlib>
#include <string>

namespace modaladapt {

// Stderr logging, level picked by MODALADAPT_LOG (error, info, debug).
enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };

inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("MODALADAPT_LOG");
    if (env == nullptr) return LogLevel::kInfo;
    const std::string s = env;
    if (s == "debug") return LogLevel::kDebug;
    if (s == "error") return LogLevel::kError;
    return LogLevel::kInfo;
  }();
  return level;
}

inline void log_error(const std::string& msg) {
  std::fprintf(stderr, "[error] %s\n", msg.c_str());
}

inline void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::kInfo) std::fprintf(stderr, "[info] %s\n", msg.c_str());
}

inline void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::kDebug) std::fprintf(stderr, "[debug] %s\n", msg.c_str());
}

}  // namespace modaladapt
