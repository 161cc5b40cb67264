#include "logging.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>

namespace dmcodec {

spdlog::logger& logger() {
    static std::shared_ptr<spdlog::logger> instance = [] {
        auto existing = spdlog::get("dmcodec");
        if (existing) return existing;
        auto l = spdlog::stderr_color_mt("dmcodec");
        l->set_pattern("[%l] %v");
        return l;
    }();
    return *instance;
}

} // namespace dmcodec
