#pragma once

#include <stdexcept>
#include <string>

namespace postdrift {

/// Invalid configuration or arguments (CLI exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent input data (CLI exit code 4).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace postdrift
