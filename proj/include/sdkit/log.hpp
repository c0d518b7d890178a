#pragma once

#include <iostream>
#include <mutex>
#include <string>

namespace sdkit::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3 };

inline Level& threshold() {
    static Level lvl = Level::Info;
    return lvl;
}

inline void set_level(Level lvl) { threshold() = lvl; }

inline void write(Level lvl, const std::string& msg) {
    if (lvl < threshold()) return;
    static std::mutex mu;
    static const char* names[] = {"debug", "info", "warn", "error"};
    std::lock_guard<std::mutex> lock(mu);
    std::cerr << "[" << names[static_cast<int>(lvl)] << "] " << msg << "\n";
}

inline void debug(const std::string& msg) { write(Level::Debug, msg); }
inline void info(const std::string& msg) { write(Level::Info, msg); }
inline void warn(const std::string& msg) { write(Level::Warn, msg); }
inline void error(const std::string& msg) { write(Level::Error, msg); }

} // namespace sdkit::log
