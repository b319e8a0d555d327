#pragma once

#include <stdexcept>
#include <string>

#include "chiptrap/vec3.hpp"

namespace chiptrap {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidParameter : public Error {
 public:
  using Error::Error;
};

/// Malformed input document. `location` is a line number or a JSON path.
class ParseError : public Error {
 public:
  ParseError(const std::string& location, const std::string& detail)
      : Error(location + ": " + detail), location_(location), detail_(detail) {}
  const std::string& location() const { return location_; }
  const std::string& detail() const { return detail_; }

 private:
  std::string location_;
  std::string detail_;
};

/// Field evaluated too close to a wire filament.
class SingularityError : public Error {
 public:
  explicit SingularityError(const Vec3& p);
  const Vec3& point() const { return point_; }

 private:
  Vec3 point_;
};

class NoConvergence : public Error {
 public:
  using Error::Error;
};

/// Trap search ended somewhere it should not have (lost trap, quadrupole zero, ...).
class TrapError : public Error {
 public:
  using Error::Error;
};

class MultiplicityError : public Error {
 public:
  using Error::Error;
};

}  // namespace chiptrap
