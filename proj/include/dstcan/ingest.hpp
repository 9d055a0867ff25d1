#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dstcan/maneuver.hpp"
#include "dstcan/rng.hpp"

namespace dstcan {

inline constexpr int kFrameRateHz = 10;
inline constexpr double kSensingRangeFt = 90.0;
// Lateral label window is +/-4 s, longitudinal look-ahead is 5 s.
inline constexpr int kLateralWindowFrames = 4 * kFrameRateHz;
inline constexpr int kLongitudinalWindowFrames = 5 * kFrameRateHz;
inline constexpr double kBrakeSpeedRatio = 0.8;

enum class Congestion : std::uint8_t { kUntagged = 0, kLow = 1, kMedium = 2, kHigh = 3 };

std::string to_string(Congestion c);
Congestion congestion_from_string(const std::string& s);

struct TrackPoint {
  std::int32_t vehicle_id = 0;
  std::int32_t frame_id = 0;
  std::int32_t lane_id = 1;
  double x_lat = 0.0;  // feet, increases to the right
  double y_lon = 0.0;  // feet, increases in the driving direction

  friend bool operator==(const TrackPoint&, const TrackPoint&) = default;
};

// One vehicle's contiguous 10 Hz trajectory.
struct Track {
  std::int32_t vehicle_id = 0;
  Congestion congestion = Congestion::kUntagged;
  std::vector<TrackPoint> points;

  std::int32_t first_frame() const { return points.front().frame_id; }
  std::int32_t last_frame() const { return points.back().frame_id; }
  bool covers(std::int32_t frame) const {
    return !points.empty() && frame >= first_frame() && frame <= last_frame();
  }
  bool covers(std::int32_t from, std::int32_t to) const { return covers(from) && covers(to); }
  // Precondition: covers(frame).
  const TrackPoint& at(std::int32_t frame) const { return points[static_cast<std::size_t>(frame - first_frame())]; }

  friend bool operator==(const Track&, const Track&) = default;
};

// Immutable set of tracks with a per-frame index of present vehicles.
class TrackStore {
 public:
  TrackStore() = default;
  // Validates every track (non-empty, contiguous frames, lane_id >= 1).
  explicit TrackStore(std::vector<Track> tracks);

  const std::map<std::int32_t, Track>& tracks() const { return tracks_; }
  const std::map<std::int32_t, std::vector<std::int32_t>>& frame_index() const { return frame_index_; }
  const Track* find(std::int32_t vehicle_id) const;
  // Sorted vehicle ids present at the frame; empty if none.
  const std::vector<std::int32_t>& vehicles_at(std::int32_t frame) const;
  std::size_t point_count() const { return point_count_; }
  bool empty() const { return tracks_.empty(); }

  friend bool operator==(const TrackStore& a, const TrackStore& b) { return a.tracks_ == b.tracks_; }

 private:
  std::map<std::int32_t, Track> tracks_;
  std::map<std::int32_t, std::vector<std::int32_t>> frame_index_;
  std::size_t point_count_ = 0;
};

// Reads header-bearing comma-separated records. Required columns (case-insensitive):
// vehicle_id, frame_id, lane_id, local_x_ft (or local_x), local_y_ft (or local_y).
// Other columns are ignored. Records may appear in any order.
TrackStore parse_tracks(std::istream& source, Congestion tag = Congestion::kUntagged);
// Writes the five-column layout read by parse_tracks.
void serialize_tracks(const TrackStore& store, std::ostream& out);

inline constexpr std::uint32_t kTrackArchiveVersion = 1;
void write_track_archive(const TrackStore& store, std::ostream& out);
TrackStore read_track_archive(std::istream& in);

struct Neighbor {
  std::int32_t vehicle_id = 0;
  double rel_lat = 0.0;
  double rel_lon = 0.0;
  int lane_offset = 0;  // -1 left, 0 same, +1 right

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

struct Snapshot {
  std::int32_t ego_id = 0;
  std::int32_t frame = 0;
  std::vector<Neighbor> neighbors;  // ascending vehicle id
};

// True if the relative offset lies in the sensed window around an ego.
bool in_sensing_window(double rel_lon, int lane_offset);

// Throws DataError if the ego is absent at the frame.
Snapshot neighborhood(const TrackStore& store, std::int32_t ego, std::int32_t frame);

// Label windows; the labelers return S / C when these are false.
bool has_lateral_window(const Track& track, std::int32_t frame);
bool has_longitudinal_window(const Track& track, std::int32_t frame);

// First lane change inside [frame - 4 s, frame + 4 s]: decrease is L, increase is R.
Lateral label_lateral(const Track& track, std::int32_t frame);
// B if the mean speed over the next 5 s is below 0.8 x current speed.
Longitudinal label_longitudinal(const Track& track, std::int32_t frame);
ManeuverLabel human_label(const Track& track, std::int32_t frame);

// Speed (ft/s) over the step that ends at `frame`, or the one starting there for
// a track's first frame.
double current_speed(const Track& track, std::int32_t frame);

// Keeps every L/R sample and a seeded random round(keep_fraction * n_S) of the
// S samples, preserving input order.
template <typename Sample, typename LateralOf>
std::vector<Sample> balance_dataset(const std::vector<Sample>& samples, double keep_fraction, std::uint64_t seed,
                                    LateralOf lateral_of);

std::vector<std::pair<Snapshot, ManeuverLabel>> balance_dataset(
    const std::vector<std::pair<Snapshot, ManeuverLabel>>& samples, double keep_fraction, std::uint64_t seed);

// Selected indices (sorted) for balance_dataset; exposed for callers keeping
// parallel arrays.
std::vector<std::size_t> balance_indices(const std::vector<Lateral>& laterals, double keep_fraction,
                                         std::uint64_t seed);

template <typename Sample, typename LateralOf>
std::vector<Sample> balance_dataset(const std::vector<Sample>& samples, double keep_fraction, std::uint64_t seed,
                                    LateralOf lateral_of) {
  std::vector<Lateral> laterals;
  laterals.reserve(samples.size());
  for (const auto& s : samples) laterals.push_back(lateral_of(s));
  std::vector<Sample> out;
  for (auto i : balance_indices(laterals, keep_fraction, seed)) out.push_back(samples[i]);
  return out;
}

enum class EventKind : std::uint8_t { kLeftChange, kRightChange, kBrake };

// Scripted event; `frame` is the frame at which the manoeuvre is centered.
struct ScriptedEvent {
  int vehicle = 0;  // index into the generated vehicles, 0-based
  std::int32_t frame = 0;
  EventKind kind = EventKind::kBrake;
};

struct ScenarioConfig {
  int n_vehicles = 30;
  int n_lanes = 3;
  int n_frames = 600;
  double lane_width_ft = 12.0;
  double speed_min_fps = 40.0;
  double speed_max_fps = 65.0;
  double road_length_ft = 1500.0;  // initial placement span
  double min_spacing_ft = 30.0;    // initial bumper-to-bumper spacing within a lane
  // Random events per vehicle per second.
  double lane_change_rate = 0.02;
  double brake_rate = 0.02;
  // When false, every vehicle keeps its initial speed and lane unless scripted.
  bool car_following = true;
  std::vector<ScriptedEvent> scripted;
};

// Multi-lane 10 Hz traffic: car following, gap-checked lane changes, braking
// episodes. Deterministic per seed. Throws UsageError for infeasible configs.
TrackStore synth_scenarios(const ScenarioConfig& config, std::uint64_t seed);

}  // namespace dstcan
