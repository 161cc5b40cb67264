#pragma once

#include <spdlog/spdlog.h>

namespace dmcodec {

// Library-wide logger writing to stderr, so CLI stdout stays machine-readable.
spdlog::logger& logger();

} // namespace dmcodec
