#include "patchseg/log.hpp"

#include <atomic>
#include <mutex>

#include <fmt/core.h>

namespace patchseg::log {
namespace {
std::atomic<Level> g_level{Level::kInfo};
std::mutex g_mutex;

void emit(Level at, std::string_view tag, std::string_view message) {
  if (at < g_level.load()) return;
  std::lock_guard lock(g_mutex);
  fmt::print(stderr, "patchseg:{}: {}\n", tag, message);
}
}  // namespace

void set_level(Level level) { g_level = level; }
Level level() { return g_level.load(); }

void info(std::string_view message) { emit(Level::kInfo, "info", message); }
void warn(std::string_view message) { emit(Level::kWarn, "warn", message); }
void error(std::string_view message) { emit(Level::kError, "error", message); }

}  // namespace patchseg::log
