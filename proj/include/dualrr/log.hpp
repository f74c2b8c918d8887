#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace dualrr {

enum class LogLevel { kInfo = 0, kDebug = 1 };

// DUALRR_LOG=debug turns on debug lines; anything else (or unset) means info.
inline LogLevel log_level() {
  static const LogLevel lvl = [] {
    const char* e = std::getenv("DUALRR_LOG");
    return (e && std::strcmp(e, "debug") == 0) ? LogLevel::kDebug : LogLevel::kInfo;
  }();
  return lvl;
}

inline void log_info(const std::string& msg) {
  std::fprintf(stderr, "[dualrr] %s\n", msg.c_str());
}

inline void log_debug(const std::string& msg) {
  if (log_level() == LogLevel::kDebug)
    std::fprintf(stderr, "[dualrr:debug] %s\n", msg.c_str());
}

}  // namespace dualrr
