#pragma once

#include <cmath>
#include <limits>

#include "dstcan/grid.hpp"
#include "dstcan/maneuver.hpp"

// Rule-based ground-truth manoeuvre oracle over binary occupancy slices.
namespace dstcan::gtrules {

inline constexpr double kFree = std::numeric_limits<double>::infinity();
// Two free cells alongside the ego: sqrt(2^2 + 1^2).
inline const double kSafeDistance = std::sqrt(5.0);
inline constexpr int kTwoSecondsFrames = 2 * kFrameRateHz;

struct GtFeatures {
  int d_s = 0;    // unoccupied cells ahead of the ego in its lane
  int d_pre = 0;  // the same count two seconds earlier
  // Cell-unit L2 distance to the nearest occupied cell of each adjacent-lane
  // quadrant (rows behind / ahead of the ego row); kFree when empty.
  double d_lb = kFree, d_lf = kFree, d_rb = kFree, d_rf = kFree;
  int i_r = 0;  // cell right of the ego occupied
  int i_l = 0;  // cell left of the ego occupied

  friend bool operator==(const GtFeatures&, const GtFeatures&) = default;
};

// Slices must be 13 x 3 (any odd row count works) and strictly binary;
// throws UsageError otherwise.
GtFeatures extract_features(const grid::Slice& now, const grid::Slice& prev);
// Uses d_pre = d_s when the two-seconds-ago slice is unavailable.
GtFeatures extract_features(const grid::Slice& now);

ManeuverLabel gt_decision(const GtFeatures& f);

// Features from the current and two-seconds-ago past slices of a context grid.
GtFeatures grid_features(const grid::ContextGrid& grid, const grid::GridConfig& config);
ManeuverLabel gt_label(const grid::ContextGrid& grid, const grid::GridConfig& config);

}  // namespace dstcan::gtrules
