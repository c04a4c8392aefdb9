#pragma once

#include <string>

namespace hhic {

inline constexpr const char* kVerbosityEnv = "HHIC_VERBOSITY";

// Reads HHIC_VERBOSITY (trace, debug, info, warn, error, off; default info)
// and sets the global log level. Unknown values fall back to info with a
// warning.
void configure_logging_from_env();

}  // namespace hhic
