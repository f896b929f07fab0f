#pragma once

#include <stdexcept>
#include <string>

namespace physekf {

/// Solver or filter arithmetic broke down (iteration cap, singular system, tunneling).
class NumericalFailure : public std::runtime_error {
 public:
  explicit NumericalFailure(const std::string& what) : std::runtime_error(what) {}
};

class InitializationFailure : public std::runtime_error {
 public:
  explicit InitializationFailure(const std::string& what) : std::runtime_error(what) {}
};

/// Bad geometry or malformed input data (degenerate hull, unreadable mesh).
class InvalidInput : public std::runtime_error {
 public:
  explicit InvalidInput(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace physekf
