// SPDX-License-Identifier: Apache-2.0
#include "beeplan/log.hpp"

#include <cstdlib>
#include <cstring>
#include <mutex>

namespace beeplan::log {

Level threshold() {
  static Level level = [] {
    const char* env = std::getenv("BEEPLAN_LOG");
    if (env == nullptr) return Level::Error;
    if (std::strcmp(env, "debug") == 0) return Level::Debug;
    if (std::strcmp(env, "info") == 0) return Level::Info;
    return Level::Error;
  }();
  return level;
}

void write(Level level, const std::string& msg) {
  if (level > threshold()) return;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  const char* tag = level == Level::Error ? "error" : level == Level::Info ? "info" : "debug";
  std::fprintf(stderr, "[beeplan %s] %s\n", tag, msg.c_str());
}

} // namespace beeplan::log
