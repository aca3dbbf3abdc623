#pragma once

// Line-oriented logging to stderr. Every line starts with "patchseg:<level>:"
// so batch logs can be filtered by prefix.

#include <string_view>

namespace patchseg::log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kQuiet = 4 };

void set_level(Level level);
Level level();

void info(std::string_view message);
void warn(std::string_view message);
void error(std::string_view message);

}  // namespace patchseg::log
