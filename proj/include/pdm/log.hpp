#pragma once

#include <sstream>
#include <string>

namespace pdm::log {

enum class Level : int { Error = 0, Warn = 1, Info = 2, Debug = 3 };

// Effective level comes from the PDM_LOG environment variable
// (error|warn|info|debug), defaulting to warn. Output goes to stderr.
Level level();
void set_level(Level lvl);
void write(Level lvl, const std::string& msg);

template <typename... Args>
void emit(Level lvl, Args&&... args) {
    if (lvl > level()) return;
    std::ostringstream os;
    (os << ... << args);
    write(lvl, os.str());
}

template <typename... Args>
void error(Args&&... args) {
    emit(Level::Error, std::forward<Args>(args)...);
}
template <typename... Args>
void warn(Args&&... args) {
    emit(Level::Warn, std::forward<Args>(args)...);
}
template <typename... Args>
void info(Args&&... args) {
    emit(Level::Info, std::forward<Args>(args)...);
}
template <typename... Args>
void debug(Args&&... args) {
    emit(Level::Debug, std::forward<Args>(args)...);
}

}  // namespace pdm::log
