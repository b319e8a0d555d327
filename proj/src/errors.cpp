#include "chiptrap/errors.hpp"

#include <sstream>

namespace chiptrap {

namespace {
std::string describe(const Vec3& p) {
  std::ostringstream os;
  os.precision(9);
  os << "field evaluation within 1 nm of a wire at (" << p.x << ", " << p.y << ", " << p.z
     << ") m";
  return os.str();
}
}  // namespace

SingularityError::SingularityError(const Vec3& p) : Error(describe(p)), point_(p) {}

}  // namespace chiptrap
