#pragma once

#include <iostream>
#include <sstream>
#include <string_view>

namespace patchssl::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

Level level();
void set_level(Level level);

template <typename... Args>
void write(Level lvl, std::string_view tag, const Args&... args) {
  if (lvl < level()) return;
  // One write per line so concurrent workers do not interleave.
  std::ostringstream os;
  os << '[' << tag << "] ";
  (os << ... << args);
  os << '\n';
  std::cerr << os.str();
}

template <typename... Args>
void info(const Args&... args) { write(Level::info, "info", args...); }
template <typename... Args>
void warn(const Args&... args) { write(Level::warn, "warn", args...); }
template <typename... Args>
void debug(const Args&... args) { write(Level::debug, "debug", args...); }

}  // namespace patchssl::log
