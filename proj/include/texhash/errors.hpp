#pragma once

#include <stdexcept>
#include <string>

namespace texhash {

// Bad or unknown configuration keys and values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inputs that parse but cannot be used (missing classes, too-small images).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A loss or activation went non-finite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem failures and malformed binary/text files.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace texhash
