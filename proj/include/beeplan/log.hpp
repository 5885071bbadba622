// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <string>

namespace beeplan::log {

enum class Level { Error = 0, Info = 1, Debug = 2 };

// Reads BEEPLAN_LOG ({error,info,debug}) once; defaults to error.
Level threshold();

void write(Level level, const std::string& msg);

inline void error(const std::string& msg) { write(Level::Error, msg); }
inline void info(const std::string& msg) { write(Level::Info, msg); }
inline void debug(const std::string& msg) { write(Level::Debug, msg); }

} // namespace beeplan::log
