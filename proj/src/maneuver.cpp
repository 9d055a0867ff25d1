#include "dstcan/maneuver.hpp"

#include "dstcan/errors.hpp"

namespace dstcan {

char to_char(Lateral l) {
  switch (l) {
    case Lateral::kSame: return 'S';
    case Lateral::kLeft: return 'L';
    case Lateral::kRight: return 'R';
  }
  return '?';
}

char to_char(Longitudinal l) {
  return l == Longitudinal::kCruise ? 'C' : 'B';
}

std::string to_string(const ManeuverLabel& label) {
  return {to_char(label.lateral), to_char(label.longitudinal)};
}

Lateral lateral_from_char(char c) {
  switch (c) {
    case 'S': return Lateral::kSame;
    case 'L': return Lateral::kLeft;
    case 'R': return Lateral::kRight;
    default: throw UsageError(std::string("unknown lateral code '") + c + "'");
  }
}

Longitudinal longitudinal_from_char(char c) {
  switch (c) {
    case 'C': return Longitudinal::kCruise;
    case 'B': return Longitudinal::kBrake;
    default: throw UsageError(std::string("unknown longitudinal code '") + c + "'");
  }
}

ManeuverLabel label_from_string(std::string_view code) {
  if (code.size() != 2) throw UsageError("label code must have two letters: '" + std::string(code) + "'");
  return {lateral_from_char(code[0]), longitudinal_from_char(code[1])};
}

}  // namespace dstcan
