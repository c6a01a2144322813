#pragma once

#include <stdexcept>
#include <string>

namespace ssmvis {

// Incompatible shapes or out-of-range axes/labels.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf produced by a forward op, or a numerical precondition violated
// (e.g. non-positive step size).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unreadable files, bad image bytes, malformed result files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ssmvis
