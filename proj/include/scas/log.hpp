#pragma once

#include <memory>

#include <spdlog/spdlog.h>

namespace scas {

// Library-wide logger on stderr. Level comes from SCAS_LOG_LEVEL
// (error, info, debug); default is info.
std::shared_ptr<spdlog::logger> logger();

}  // namespace scas
