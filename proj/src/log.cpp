#include "stilt/log.hpp"

#include <atomic>
#include <cstdio>
#include <mutex>
#include <stdexcept>
#include <string>

namespace stilt::log {

namespace {
std::atomic<Level> g_level{Level::info};
std::mutex g_mutex;
}  // namespace

void set_level(Level l) { g_level = l; }
Level level() { return g_level; }

Level parse_level(std::string_view name) {
    if (name == "debug") return Level::debug;
    if (name == "info") return Level::info;
    if (name == "warn" || name == "warning") return Level::warn;
    if (name == "error") return Level::error;
    if (name == "off") return Level::off;
    throw std::invalid_argument("unknown log level: " + std::string(name));
}

void write(Level l, std::string_view message) {
    static constexpr const char* names[] = {"debug", "info", "warn", "error"};
    std::lock_guard lock(g_mutex);
    std::fprintf(stderr, "[stilt %s] %.*s\n", names[static_cast<int>(l)], static_cast<int>(message.size()),
                 message.data());
}

}  // namespace stilt::log
