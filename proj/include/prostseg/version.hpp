#pragma once

#define PROSTSEG_VERSION_MAJOR 0
#define PROSTSEG_VERSION_MINOR 1
#define PROSTSEG_VERSION_PATCH 0
#define PROSTSEG_VERSION "0.1.0"

namespace prostseg {

inline const char* version() { return PROSTSEG_VERSION; }

/// Name of the environment variable that switches the library into
/// deterministic mode (single-threaded BLAS, fully reproducible runs).
inline const char* kDeterministicEnvVar = "PROSTSEG_DETERMINISTIC";

}  // namespace prostseg
