#include "pdm/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <mutex>

namespace pdm::log {

namespace {

Level parse_env() {
    const char* env = std::getenv("PDM_LOG");
    if (!env) return Level::Warn;
    std::string v(env);
    if (v == "error") return Level::Error;
    if (v == "warn") return Level::Warn;
    if (v == "info") return Level::Info;
    if (v == "debug") return Level::Debug;
    std::fprintf(stderr, "[warn] PDM_LOG value \"%s\" not recognized, using warn\n", env);
    return Level::Warn;
}

Level& state() {
    static Level lvl = parse_env();
    return lvl;
}

const char* tag(Level lvl) {
    switch (lvl) {
        case Level::Error: return "error";
        case Level::Warn: return "warn";
        case Level::Info: return "info";
        case Level::Debug: return "debug";
    }
    return "?";
}

std::mutex& sink_mutex() {
    static std::mutex m;
    return m;
}

}  // namespace

Level level() { return state(); }

void set_level(Level lvl) { state() = lvl; }

void write(Level lvl, const std::string& msg) {
    std::lock_guard<std::mutex> lock(sink_mutex());
    std::fprintf(stderr, "[%s] %s\n", tag(lvl), msg.c_str());
}

}  // namespace pdm::log
