#include "hhic/logging.hpp"

#include <cstdlib>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace hhic {

void configure_logging_from_env() {
  auto logger = spdlog::stderr_color_mt("hhic");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%^%l%$] %v");
  const char* env = std::getenv(kVerbosityEnv);
  const std::string value = env ? env : "info";
  const auto level = spdlog::level::from_str(value);
  if (level == spdlog::level::off && value != "off") {
    spdlog::set_level(spdlog::level::info);
    spdlog::warn("unknown {}='{}', using info", kVerbosityEnv, value);
    return;
  }
  spdlog::set_level(level);
}

}  // namespace hhic
