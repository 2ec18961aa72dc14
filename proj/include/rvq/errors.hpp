#pragma once

#include <stdexcept>
#include <string>

namespace rvq {

/// Invalid configuration or malformed input file. CLI exit code 2.
class ConfigError : public std::runtime_error {
  public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Training produced a non-finite or runaway loss. CLI exit code 3.
class DivergenceError : public std::runtime_error {
  public:
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

/// Filesystem failure. CLI exit code 4.
class IoError : public std::runtime_error {
  public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace rvq
