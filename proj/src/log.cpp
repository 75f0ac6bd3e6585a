#include "scas/log.hpp"

#include <cstdlib>
#include <string_view>

#include <spdlog/sinks/stdout_color_sinks.h>

namespace scas {

std::shared_ptr<spdlog::logger> logger() {
  static std::shared_ptr<spdlog::logger> instance = [] {
    auto lg = spdlog::stderr_color_mt("scas");
    lg->set_pattern("[%l] %v");
    auto level = spdlog::level::info;
    if (const char* env = std::getenv("SCAS_LOG_LEVEL")) {
      const std::string_view v(env);
      if (v == "error") level = spdlog::level::err;
      else if (v == "debug") level = spdlog::level::debug;
    }
    lg->set_level(level);
    return lg;
  }();
  return instance;
}

}  // namespace scas
