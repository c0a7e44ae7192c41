#pragma once

#include <stdexcept>
#include <string>

namespace fsta {

/// Shape or size disagreement between tensors / files and expectations.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid argument value (bad rate, unknown preset, out-of-range flag).
class ValueError : public std::runtime_error {
 public:
  explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure at runtime (NaN loss, non-finite update).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File-system or format failure while reading/writing artifacts.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fsta
