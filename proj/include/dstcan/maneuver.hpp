#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace dstcan {

// Class indices double as network output indices.
enum class Lateral : std::uint8_t { kSame = 0, kLeft = 1, kRight = 2 };
enum class Longitudinal : std::uint8_t { kCruise = 0, kBrake = 1 };

inline constexpr int kNumLateral = 3;
inline constexpr int kNumLongitudinal = 2;

struct ManeuverLabel {
  Lateral lateral = Lateral::kSame;
  Longitudinal longitudinal = Longitudinal::kCruise;

  friend bool operator==(const ManeuverLabel&, const ManeuverLabel&) = default;
};

char to_char(Lateral l);
char to_char(Longitudinal l);
// Two-letter code such as "SC" or "LB".
std::string to_string(const ManeuverLabel& label);

// Throws UsageError for anything other than S/L/R or C/B.
Lateral lateral_from_char(char c);
Longitudinal longitudinal_from_char(char c);
ManeuverLabel label_from_string(std::string_view code);

}  // namespace dstcan
