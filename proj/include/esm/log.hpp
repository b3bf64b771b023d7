#pragma once

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <memory>
#include <string_view>

namespace esm {

// Level comes from ESM_LOG = error | info | debug (default info). Output goes to stderr.
inline spdlog::level::level_enum log_level_from_env() {
    const char* raw = std::getenv("ESM_LOG");
    std::string_view v = raw ? raw : "info";
    if (v == "error") return spdlog::level::err;
    if (v == "debug") return spdlog::level::debug;
    if (v == "off") return spdlog::level::off;
    return spdlog::level::info;
}

inline spdlog::logger& logger() {
    static std::shared_ptr<spdlog::logger> instance = [] {
        auto log = std::make_shared<spdlog::logger>("esm", std::make_shared<spdlog::sinks::stderr_sink_mt>());
        log->set_pattern("esm: [%l] %v");
        log->set_level(log_level_from_env());
        return log;
    }();
    return *instance;
}

}  // namespace esm
