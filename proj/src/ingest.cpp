#include "dstcan/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

#include "dstcan/binary_io.hpp"
#include "dstcan/errors.hpp"

namespace dstcan {

std::string to_string(Congestion c) {
  switch (c) {
    case Congestion::kUntagged: return "untagged";
    case Congestion::kLow: return "low";
    case Congestion::kMedium: return "medium";
    case Congestion::kHigh: return "high";
  }
  return "untagged";
}

Congestion congestion_from_string(const std::string& s) {
  if (s == "untagged" || s.empty()) return Congestion::kUntagged;
  if (s == "low") return Congestion::kLow;
  if (s == "medium") return Congestion::kMedium;
  if (s == "high") return Congestion::kHigh;
  throw UsageError("unknown congestion tag '" + s + "' (expected low, medium, high or untagged)");
}

TrackStore::TrackStore(std::vector<Track> tracks) {
  for (auto& t : tracks) {
    if (t.points.empty()) throw DataError("vehicle " + std::to_string(t.vehicle_id) + " has an empty track");
    for (std::size_t i = 0; i < t.points.size(); ++i) {
      const auto& p = t.points[i];
      if (p.vehicle_id != t.vehicle_id)
        throw DataError("track " + std::to_string(t.vehicle_id) + " holds a point of vehicle " +
                        std::to_string(p.vehicle_id));
      if (p.lane_id < 1)
        throw DataError("vehicle " + std::to_string(t.vehicle_id) + " frame " + std::to_string(p.frame_id) +
                        ": lane_id must be >= 1");
      if (!std::isfinite(p.x_lat) || !std::isfinite(p.y_lon))
        throw DataError("vehicle " + std::to_string(t.vehicle_id) + " frame " + std::to_string(p.frame_id) +
                        ": non-finite position");
      if (i > 0 && p.frame_id != t.points[i - 1].frame_id + 1)
        throw DataError("vehicle " + std::to_string(t.vehicle_id) + ": frame gap between " +
                        std::to_string(t.points[i - 1].frame_id) + " and " + std::to_string(p.frame_id));
    }
    const auto id = t.vehicle_id;
    if (tracks_.count(id)) throw DataError("duplicate track for vehicle " + std::to_string(id));
    for (const auto& p : t.points) frame_index_[p.frame_id].push_back(id);
    point_count_ += t.points.size();
    tracks_.emplace(id, std::move(t));
  }
  for (auto& [frame, ids] : frame_index_) std::sort(ids.begin(), ids.end());
}

const Track* TrackStore::find(std::int32_t vehicle_id) const {
  auto it = tracks_.find(vehicle_id);
  return it == tracks_.end() ? nullptr : &it->second;
}

const std::vector<std::int32_t>& TrackStore::vehicles_at(std::int32_t frame) const {
  static const std::vector<std::int32_t> kNone;
  auto it = frame_index_.find(frame);
  return it == frame_index_.end() ? kNone : it->second;
}

namespace {

std::string normalize(std::string_view field) {
  std::string s;
  for (char c : field) {
    if (c == ' ' || c == '\t' || c == '\r' || c == '"') continue;
    s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"'))
    s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

// Integers in some exports carry a trailing ".0".
bool parse_integer(std::string_view s, std::int32_t& out) {
  if (parse_number(s, out)) return true;
  double d = 0;
  if (!parse_number(s, d) || std::floor(d) != d || std::abs(d) > std::numeric_limits<std::int32_t>::max())
    return false;
  out = static_cast<std::int32_t>(d);
  return true;
}

}  // namespace

TrackStore parse_tracks(std::istream& source, Congestion tag) {
  std::string line;
  std::size_t line_no = 0;
  // Skip leading blank lines; empty stream is an empty store.
  bool have_header = false;
  while (std::getline(source, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      have_header = true;
      break;
    }
  }
  if (!have_header) return TrackStore{};

  int col_vehicle = -1, col_frame = -1, col_lane = -1, col_x = -1, col_y = -1;
  const auto header = split_commas(line);
  for (int i = 0; i < static_cast<int>(header.size()); ++i) {
    const auto name = normalize(header[static_cast<std::size_t>(i)]);
    if (name == "vehicle_id") col_vehicle = i;
    else if (name == "frame_id") col_frame = i;
    else if (name == "lane_id") col_lane = i;
    else if (name == "local_x_ft" || (name == "local_x" && col_x < 0)) col_x = i;
    else if (name == "local_y_ft" || (name == "local_y" && col_y < 0)) col_y = i;
  }
  if (col_vehicle < 0 || col_frame < 0 || col_lane < 0 || col_x < 0 || col_y < 0)
    throw DataError("line " + std::to_string(line_no) +
                    ": header must name vehicle_id, frame_id, lane_id, local_x_ft, local_y_ft");
  const auto needed = static_cast<std::size_t>(std::max({col_vehicle, col_frame, col_lane, col_x, col_y}) + 1);

  std::map<std::int32_t, std::vector<TrackPoint>> by_vehicle;
  while (std::getline(source, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_commas(line);
    TrackPoint p;
    if (fields.size() < needed || !parse_integer(fields[static_cast<std::size_t>(col_vehicle)], p.vehicle_id) ||
        !parse_integer(fields[static_cast<std::size_t>(col_frame)], p.frame_id) ||
        !parse_integer(fields[static_cast<std::size_t>(col_lane)], p.lane_id) ||
        !parse_number(fields[static_cast<std::size_t>(col_x)], p.x_lat) ||
        !parse_number(fields[static_cast<std::size_t>(col_y)], p.y_lon))
      throw DataError("line " + std::to_string(line_no) + ": malformed record");
    if (p.lane_id < 1) throw DataError("line " + std::to_string(line_no) + ": lane_id must be >= 1");
    by_vehicle[p.vehicle_id].push_back(p);
  }

  std::vector<Track> tracks;
  tracks.reserve(by_vehicle.size());
  for (auto& [id, points] : by_vehicle) {
    std::stable_sort(points.begin(), points.end(),
                     [](const TrackPoint& a, const TrackPoint& b) { return a.frame_id < b.frame_id; });
    for (std::size_t i = 1; i < points.size(); ++i) {
      if (points[i].frame_id == points[i - 1].frame_id)
        throw DataError("duplicate record for vehicle " + std::to_string(id) + " frame " +
                        std::to_string(points[i].frame_id));
      if (points[i].frame_id != points[i - 1].frame_id + 1)
        throw DataError("vehicle " + std::to_string(id) + ": non-contiguous frames, gap from " +
                        std::to_string(points[i - 1].frame_id) + " to " + std::to_string(points[i].frame_id));
    }
    tracks.push_back(Track{id, tag, std::move(points)});
  }
  return TrackStore(std::move(tracks));
}

void serialize_tracks(const TrackStore& store, std::ostream& out) {
  out << "vehicle_id,frame_id,lane_id,local_x_ft,local_y_ft\n";
  char buf[64];
  auto put = [&](double v) {
    // Shortest representation that round-trips exactly.
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.write(buf, ptr - buf);
  };
  for (const auto& [id, track] : store.tracks()) {
    for (const auto& p : track.points) {
      out << p.vehicle_id << ',' << p.frame_id << ',' << p.lane_id << ',';
      put(p.x_lat);
      out << ',';
      put(p.y_lon);
      out << '\n';
    }
  }
}

void write_track_archive(const TrackStore& store, std::ostream& out) {
  binio::put_magic(out, "DSTT");
  binio::put_u32(out, kTrackArchiveVersion);
  binio::put_u32(out, static_cast<std::uint32_t>(store.tracks().size()));
  for (const auto& [id, track] : store.tracks()) {
    binio::put_i32(out, track.vehicle_id);
    binio::put_i32(out, static_cast<std::int32_t>(track.congestion));
    binio::put_i32(out, static_cast<std::int32_t>(track.points.size()));
    for (const auto& p : track.points) {
      binio::put_i32(out, p.frame_id);
      binio::put_i32(out, p.lane_id);
      binio::put_f64(out, p.x_lat);
      binio::put_f64(out, p.y_lon);
    }
  }
  if (!out) throw DataError("failed writing track archive");
}

TrackStore read_track_archive(std::istream& in) {
  binio::expect_magic(in, "DSTT");
  const auto version = binio::get_u32(in);
  if (version != kTrackArchiveVersion)
    throw DataError("unsupported track archive version " + std::to_string(version));
  const auto n_tracks = binio::get_u32(in);
  std::vector<Track> tracks;
  tracks.reserve(n_tracks);
  for (std::uint32_t i = 0; i < n_tracks; ++i) {
    Track t;
    t.vehicle_id = binio::get_i32(in);
    const auto tag = binio::get_i32(in);
    if (tag < 0 || tag > 3) throw DataError("bad congestion tag in track archive");
    t.congestion = static_cast<Congestion>(tag);
    const auto n = binio::get_i32(in);
    if (n <= 0) throw DataError("bad point count in track archive");
    t.points.resize(static_cast<std::size_t>(n));
    for (auto& p : t.points) {
      p.vehicle_id = t.vehicle_id;
      p.frame_id = binio::get_i32(in);
      p.lane_id = binio::get_i32(in);
      p.x_lat = binio::get_f64(in);
      p.y_lon = binio::get_f64(in);
    }
    tracks.push_back(std::move(t));
  }
  return TrackStore(std::move(tracks));
}

bool in_sensing_window(double rel_lon, int lane_offset) {
  return std::abs(rel_lon) <= kSensingRangeFt && lane_offset >= -1 && lane_offset <= 1;
}

Snapshot neighborhood(const TrackStore& store, std::int32_t ego, std::int32_t frame) {
  const Track* ego_track = store.find(ego);
  if (ego_track == nullptr || !ego_track->covers(frame))
    throw DataError("ego vehicle " + std::to_string(ego) + " absent at frame " + std::to_string(frame));
  const auto& e = ego_track->at(frame);
  Snapshot snap{ego, frame, {}};
  for (auto id : store.vehicles_at(frame)) {
    if (id == ego) continue;
    const auto& p = store.find(id)->at(frame);
    const double rel_lon = p.y_lon - e.y_lon;
    const int lane_offset = p.lane_id - e.lane_id;
    if (in_sensing_window(rel_lon, lane_offset)) snap.neighbors.push_back({id, p.x_lat - e.x_lat, rel_lon, lane_offset});
  }
  return snap;
}

bool has_lateral_window(const Track& track, std::int32_t frame) {
  return track.covers(frame - kLateralWindowFrames, frame + kLateralWindowFrames);
}

bool has_longitudinal_window(const Track& track, std::int32_t frame) {
  return track.covers(frame, frame + kLongitudinalWindowFrames) && track.points.size() >= 2;
}

Lateral label_lateral(const Track& track, std::int32_t frame) {
  if (!has_lateral_window(track, frame)) return Lateral::kSame;
  for (auto f = frame - kLateralWindowFrames + 1; f <= frame + kLateralWindowFrames; ++f) {
    const int prev = track.at(f - 1).lane_id;
    const int cur = track.at(f).lane_id;
    if (cur < prev) return Lateral::kLeft;
    if (cur > prev) return Lateral::kRight;
  }
  return Lateral::kSame;
}

namespace {

double step_speed(const TrackPoint& a, const TrackPoint& b) {
  return std::hypot(b.x_lat - a.x_lat, b.y_lon - a.y_lon) * kFrameRateHz;
}

}  // namespace

double current_speed(const Track& track, std::int32_t frame) {
  if (track.covers(frame - 1) && track.covers(frame)) return step_speed(track.at(frame - 1), track.at(frame));
  return step_speed(track.at(frame), track.at(frame + 1));
}

Longitudinal label_longitudinal(const Track& track, std::int32_t frame) {
  if (!has_longitudinal_window(track, frame)) return Longitudinal::kCruise;
  const double now = current_speed(track, frame);
  double sum = 0.0;
  for (auto f = frame; f < frame + kLongitudinalWindowFrames; ++f) sum += step_speed(track.at(f), track.at(f + 1));
  const double mean = sum / kLongitudinalWindowFrames;
  return mean < kBrakeSpeedRatio * now ? Longitudinal::kBrake : Longitudinal::kCruise;
}

ManeuverLabel human_label(const Track& track, std::int32_t frame) {
  return {label_lateral(track, frame), label_longitudinal(track, frame)};
}

std::vector<std::size_t> balance_indices(const std::vector<Lateral>& laterals, double keep_fraction,
                                         std::uint64_t seed) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
    throw UsageError("keep_fraction must lie in (0, 1], got " + std::to_string(keep_fraction));
  std::vector<std::size_t> same;
  std::vector<char> keep(laterals.size(), 1);
  for (std::size_t i = 0; i < laterals.size(); ++i)
    if (laterals[i] == Lateral::kSame) same.push_back(i);
  if (keep_fraction < 1.0 && !same.empty()) {
    const auto n_keep = static_cast<std::size_t>(std::llround(keep_fraction * static_cast<double>(same.size())));
    Rng rng(seed);
    // Partial Fisher-Yates: the first n_keep entries become a uniform subset.
    for (std::size_t i = 0; i < n_keep; ++i) {
      const auto j = i + rng.below(same.size() - i);
      std::swap(same[i], same[j]);
    }
    for (std::size_t i = n_keep; i < same.size(); ++i) keep[same[i]] = 0;
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < laterals.size(); ++i)
    if (keep[i]) out.push_back(i);
  return out;
}

std::vector<std::pair<Snapshot, ManeuverLabel>> balance_dataset(
    const std::vector<std::pair<Snapshot, ManeuverLabel>>& samples, double keep_fraction, std::uint64_t seed) {
  return balance_dataset(samples, keep_fraction, seed,
                         [](const std::pair<Snapshot, ManeuverLabel>& s) { return s.second.lateral; });
}

// ---------------------------------------------------------------------------
// Synthetic traffic

namespace {

constexpr double kDt = 1.0 / kFrameRateHz;
constexpr double kVehicleLength = 15.0;
constexpr int kLaneChangeFrames = 30;
constexpr int kBrakeFrames = 30;

// Intelligent-driver-model constants in feet and seconds.
constexpr double kIdmAccel = 4.0;
constexpr double kIdmDecel = 6.0;
constexpr double kIdmHeadway = 1.2;
constexpr double kIdmMinGap = 6.0;
constexpr double kMaxDecel = 25.0;
constexpr double kBrakeDecel = 9.0;

struct SimVehicle {
  double x = 0, y = 0, v = 0, desired_v = 0;
  int lane = 1;          // lane the vehicle is assigned to (target during a change)
  int from_lane = 1;     // lane at change start
  int change_left = 0;   // frames left in a lane change
  int brake_left = 0;    // frames left in a braking episode
  double x_start = 0, x_goal = 0;
};

double lane_center(int lane, double width) { return (lane - 0.5) * width; }

int lane_of(double x, double width, int n_lanes) {
  return std::clamp(static_cast<int>(std::floor(x / width)) + 1, 1, n_lanes);
}

bool occupies(const SimVehicle& v, int lane) {
  return v.lane == lane || (v.change_left > 0 && v.from_lane == lane);
}

// Gap from `self` to the nearest vehicle ahead in `lane` (bumper to bumper) and its speed.
std::pair<double, double> leader_gap(const std::vector<SimVehicle>& vs, std::size_t self, int lane) {
  double gap = std::numeric_limits<double>::infinity();
  double speed = 0.0;
  for (std::size_t j = 0; j < vs.size(); ++j) {
    if (j == self || !occupies(vs[j], lane)) continue;
    const double d = vs[j].y - vs[self].y;
    if (d <= 0.0 && !(d == 0.0 && j > self)) continue;
    const double g = d - kVehicleLength;
    if (g < gap) {
      gap = g;
      speed = vs[j].v;
    }
  }
  return {gap, speed};
}

double follower_gap(const std::vector<SimVehicle>& vs, std::size_t self, int lane, double* follower_speed) {
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < vs.size(); ++j) {
    if (j == self || !occupies(vs[j], lane)) continue;
    const double d = vs[self].y - vs[j].y;
    if (d < 0.0) continue;
    const double g = d - kVehicleLength;
    if (g < gap) {
      gap = g;
      *follower_speed = vs[j].v;
    }
  }
  return gap;
}

bool lane_change_safe(const std::vector<SimVehicle>& vs, std::size_t self, int target) {
  const auto [ahead, lead_v] = leader_gap(vs, self, target);
  double follow_v = 0.0;
  const double behind = follower_gap(vs, self, target, &follow_v);
  return ahead > std::max(20.0, vs[self].v * 1.0) && behind > std::max(20.0, follow_v * 1.0);
}

double idm_accel(const SimVehicle& v, double desired, double gap, double lead_v) {
  double a = kIdmAccel * (1.0 - std::pow(v.v / std::max(desired, 1.0), 4));
  if (std::isfinite(gap)) {
    const double s_star =
        kIdmMinGap + std::max(0.0, v.v * kIdmHeadway + v.v * (v.v - lead_v) / (2.0 * std::sqrt(kIdmAccel * kIdmDecel)));
    const double s = std::max(gap, 0.5);
    a -= kIdmAccel * (s_star / s) * (s_star / s);
  }
  return std::max(a, -kMaxDecel);
}

void start_lane_change(SimVehicle& v, int target, double width) {
  v.from_lane = v.lane;
  v.lane = target;
  v.change_left = kLaneChangeFrames;
  v.x_start = v.x;
  v.x_goal = lane_center(target, width);
}

}  // namespace

TrackStore synth_scenarios(const ScenarioConfig& config, std::uint64_t seed) {
  if (config.n_vehicles < 1) throw UsageError("n_vehicles must be >= 1");
  if (config.n_lanes < 1) throw UsageError("n_lanes must be >= 1");
  if (config.n_frames < 2) throw UsageError("n_frames must be >= 2");
  if (!(config.speed_min_fps > 0.0 && config.speed_max_fps >= config.speed_min_fps))
    throw UsageError("speed range must satisfy 0 < min <= max");
  if (!(config.lane_width_ft > 0.0)) throw UsageError("lane width must be positive");
  if (config.lane_change_rate < 0.0 || config.brake_rate < 0.0) throw UsageError("event rates must be >= 0");
  const int per_lane = (config.n_vehicles + config.n_lanes - 1) / config.n_lanes;
  const double slot = config.road_length_ft / per_lane;
  if (slot < config.min_spacing_ft + kVehicleLength)
    throw UsageError("infeasible scenario: " + std::to_string(config.n_vehicles) + " vehicles exceed the capacity of " +
                     std::to_string(config.n_lanes) + " lanes over " + std::to_string(config.road_length_ft) + " ft");
  for (const auto& ev : config.scripted)
    if (ev.vehicle < 0 || ev.vehicle >= config.n_vehicles) throw UsageError("scripted event names unknown vehicle");

  Rng rng(seed);
  std::vector<SimVehicle> vs(static_cast<std::size_t>(config.n_vehicles));
  for (int i = 0; i < config.n_vehicles; ++i) {
    auto& v = vs[static_cast<std::size_t>(i)];
    v.lane = v.from_lane = i % config.n_lanes + 1;
    const int slot_index = i / config.n_lanes;
    const double jitter = rng.uniform(0.0, slot - config.min_spacing_ft - kVehicleLength);
    v.y = slot_index * slot + jitter;
    v.x = lane_center(v.lane, config.lane_width_ft);
    v.desired_v = rng.uniform(config.speed_min_fps, config.speed_max_fps);
    v.v = v.desired_v;
  }

  std::vector<Track> tracks(vs.size());
  for (std::size_t i = 0; i < vs.size(); ++i) {
    tracks[i].vehicle_id = static_cast<std::int32_t>(i + 1);
    tracks[i].points.reserve(static_cast<std::size_t>(config.n_frames));
  }

  const double p_change = config.lane_change_rate * kDt;
  const double p_brake = config.brake_rate * kDt;
  std::vector<double> accel(vs.size());
  for (int frame = 1; frame <= config.n_frames; ++frame) {
    for (std::size_t i = 0; i < vs.size(); ++i) {
      const auto& v = vs[i];
      tracks[i].points.push_back({tracks[i].vehicle_id, frame, lane_of(v.x, config.lane_width_ft, config.n_lanes),
                                  v.x, v.y});
    }
    if (frame == config.n_frames) break;

    // Events: scripted ones are centered on their frame, random ones start now.
    for (std::size_t i = 0; i < vs.size(); ++i) {
      auto& v = vs[i];
      for (const auto& ev : config.scripted) {
        if (static_cast<std::size_t>(ev.vehicle) != i) continue;
        if (ev.kind == EventKind::kBrake && frame == ev.frame) v.brake_left = kBrakeFrames;
        if (ev.kind != EventKind::kBrake && frame == ev.frame - kLaneChangeFrames / 2) {
          const int target = v.lane + (ev.kind == EventKind::kLeftChange ? -1 : 1);
          if (target >= 1 && target <= config.n_lanes && v.change_left == 0)
            start_lane_change(v, target, config.lane_width_ft);
        }
      }
      if (p_change > 0.0 && v.change_left == 0 && rng.bernoulli(p_change)) {
        const int dir = rng.bernoulli(0.5) ? -1 : 1;
        int target = v.lane + dir;
        if (target < 1 || target > config.n_lanes) target = v.lane - dir;
        if (target >= 1 && target <= config.n_lanes && target != v.lane && lane_change_safe(vs, i, target))
          start_lane_change(v, target, config.lane_width_ft);
      }
      if (p_brake > 0.0 && v.brake_left == 0 && rng.bernoulli(p_brake)) v.brake_left = kBrakeFrames;
    }

    for (std::size_t i = 0; i < vs.size(); ++i) {
      const auto& v = vs[i];
      double a = 0.0;
      if (config.car_following) {
        auto [gap, lead_v] = leader_gap(vs, i, v.lane);
        if (v.change_left > 0) {
          auto [gap2, lead_v2] = leader_gap(vs, i, v.from_lane);
          if (gap2 < gap) {
            gap = gap2;
            lead_v = lead_v2;
          }
        }
        a = idm_accel(v, v.desired_v, gap, lead_v);
      }
      if (v.brake_left > 0) a = std::min(a, -kBrakeDecel);
      accel[i] = a;
    }
    for (std::size_t i = 0; i < vs.size(); ++i) {
      auto& v = vs[i];
      const double v_next = std::max(0.0, v.v + accel[i] * kDt);
      v.y += 0.5 * (v.v + v_next) * kDt;
      v.v = v_next;
      if (v.brake_left > 0) --v.brake_left;
      if (v.change_left > 0) {
        --v.change_left;
        const double s = 1.0 - static_cast<double>(v.change_left) / kLaneChangeFrames;
        v.x = v.x_start + (v.x_goal - v.x_start) * 0.5 * (1.0 - std::cos(std::numbers::pi * s));
        if (v.change_left == 0) v.from_lane = v.lane;
      }
    }
  }
  return TrackStore(std::move(tracks));
}

}  // namespace dstcan
