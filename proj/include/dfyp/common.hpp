#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfyp {

using Shape = std::vector<int>;

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Shape/dimension contract violations.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

/// Bad argument values (rates, thresholds, unknown ids).
class ParamError : public Error {
 public:
  explicit ParamError(const std::string& msg) : Error("parameter error: " + msg) {}
};

/// Non-finite values produced from finite inputs, or numeric aborts.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};

/// Configuration that cannot build a valid model or run.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int e : s) {
    if (e <= 0) throw ShapeError("non-positive extent " + std::to_string(e));
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

}  // namespace dfyp
