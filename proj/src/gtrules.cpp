#include "dstcan/gtrules.hpp"

#include <cmath>

#include "dstcan/errors.hpp"

namespace dstcan::gtrules {

namespace {

void check_binary(const grid::Slice& s) {
  if (s.n_lanes != 3 || s.n_rows < 1 || s.n_rows % 2 == 0 ||
      s.cells.size() != static_cast<std::size_t>(s.n_rows * s.n_lanes))
    throw UsageError("ground-truth features need an odd-row x 3-lane slice");
  for (double v : s.cells)
    if (v != 0.0 && v != 1.0) throw UsageError("ground-truth features need a binary occupancy slice");
}

int free_ahead(const grid::Slice& s) {
  const int ego = s.n_rows / 2;
  int count = 0;
  for (int r = ego + 1; r < s.n_rows; ++r) count += s.at(r, 1) == 0.0 ? 1 : 0;
  return count;
}

// Nearest occupied cell of one adjacent lane, behind or ahead of the ego row.
double quadrant_distance(const grid::Slice& s, int lane, bool ahead) {
  const int ego = s.n_rows / 2;
  double best = kFree;
  const int lo = ahead ? ego + 1 : 0;
  const int hi = ahead ? s.n_rows : ego;
  for (int r = lo; r < hi; ++r) {
    if (s.at(r, lane) == 0.0) continue;
    const double dr = r - ego;
    best = std::min(best, std::sqrt(dr * dr + 1.0));
  }
  return best;
}

}  // namespace

GtFeatures extract_features(const grid::Slice& now, const grid::Slice& prev) {
  check_binary(now);
  check_binary(prev);
  if (now.n_rows != prev.n_rows) throw UsageError("ground-truth slices differ in shape");
  GtFeatures f;
  const int ego = now.n_rows / 2;
  f.d_s = free_ahead(now);
  f.d_pre = free_ahead(prev);
  f.d_lb = quadrant_distance(now, 0, false);
  f.d_lf = quadrant_distance(now, 0, true);
  f.d_rb = quadrant_distance(now, 2, false);
  f.d_rf = quadrant_distance(now, 2, true);
  f.i_l = now.at(ego, 0) != 0.0 ? 1 : 0;
  f.i_r = now.at(ego, 2) != 0.0 ? 1 : 0;
  return f;
}

GtFeatures extract_features(const grid::Slice& now) { return extract_features(now, now); }

ManeuverLabel gt_decision(const GtFeatures& f) {
  const double safe = kSafeDistance;
  const bool left_free = f.d_lb > safe && f.d_lf > safe;
  const bool right_free = f.d_rb > safe && f.d_rf > safe;
  const bool right_blocked = f.d_rb <= safe || f.d_rf <= safe || f.i_r == 1;
  const bool left_blocked = f.d_lb <= safe || f.d_lf <= safe || f.i_l == 1;

  const int d_diff = f.d_s - f.d_pre;
  if (f.d_s > 2 && d_diff >= 0) return {Lateral::kSame, Longitudinal::kCruise};
  // Not enough room (or the leader is closing in): look for a lane to change into.
  if (left_free && right_blocked && f.i_l == 0) return {Lateral::kLeft, Longitudinal::kCruise};
  if (right_free && left_blocked && f.i_r == 0) return {Lateral::kRight, Longitudinal::kCruise};
  if (right_free && left_free && f.i_r == 0 && f.i_l == 0) return {Lateral::kRight, Longitudinal::kCruise};
  return {Lateral::kSame, Longitudinal::kBrake};
}

GtFeatures grid_features(const grid::ContextGrid& grid, const grid::GridConfig& config) {
  const int now = config.n_past - 1;
  const int prev = now - kTwoSecondsFrames;
  if (prev < 0) return extract_features(grid.slice(now));
  return extract_features(grid.slice(now), grid.slice(prev));
}

ManeuverLabel gt_label(const grid::ContextGrid& grid, const grid::GridConfig& config) {
  return gt_decision(grid_features(grid, config));
}

}  // namespace dstcan::gtrules
