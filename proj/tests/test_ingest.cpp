#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "dstcan/errors.hpp"
#include "dstcan/ingest.hpp"

using namespace dstcan;

namespace {

Track straight(std::int32_t id, std::int32_t first, int n, int lane, double x, double y0, double speed_fps) {
  Track t{id, Congestion::kUntagged, {}};
  for (int i = 0; i < n; ++i) t.points.push_back({id, first + i, lane, x, y0 + speed_fps * i / kFrameRateHz});
  return t;
}

// Speed `v0` up to and including `frame`, then `v1` for the rest.
Track speed_change(std::int32_t frame, double v0, double v1) {
  Track t{1, Congestion::kUntagged, {}};
  double y = 0.0;
  for (int f = 1; f <= 200; ++f) {
    if (f > 1) y += (f <= frame ? v0 : v1) / kFrameRateHz;
    t.points.push_back({1, f, 2, 6.0, y});
  }
  return t;
}

}  // namespace

TEST_CASE("parse_tracks reads the five required columns") {
  std::istringstream in(
      "Vehicle_ID,Frame_ID,Total_Frames,Local_X,Local_Y,Lane_ID\n"
      "7,3,3,1.5,20.0,2\n"
      "7,1,3,1.5,10.0,2\n"
      "\n"
      "7,2,3,1.5,15.0,2\n");
  const auto store = parse_tracks(in);
  REQUIRE(store.tracks().size() == 1);
  const auto& t = store.tracks().at(7);
  CHECK(t.points.size() == 3);
  CHECK(t.first_frame() == 1);
  CHECK(t.at(2).y_lon == 15.0);
  CHECK(t.at(3).lane_id == 2);
  CHECK(store.frame_index().size() == 3);
}

TEST_CASE("parse_tracks on an empty stream gives an empty store") {
  std::istringstream in("");
  CHECK(parse_tracks(in).empty());
}

TEST_CASE("one vehicle over ten frames") {
  std::ostringstream csv;
  csv << "vehicle_id,frame_id,lane_id,local_x_ft,local_y_ft\n";
  for (int f = 1; f <= 10; ++f) csv << "1," << f << ",1,3.0,4.0\n";
  std::istringstream in(csv.str());
  const auto store = parse_tracks(in);
  CHECK(store.tracks().at(1).points.size() == 10);
  CHECK(store.frame_index().size() == 10);
  CHECK(store.point_count() == 10);
}

TEST_CASE("parse errors") {
  SUBCASE("duplicate record") {
    std::istringstream in("vehicle_id,frame_id,lane_id,local_x_ft,local_y_ft\n1,1,1,0,0\n1,1,1,0,1\n");
    CHECK_THROWS_AS(parse_tracks(in), DataError);
  }
  SUBCASE("frame gap names the vehicle") {
    std::istringstream in("vehicle_id,frame_id,lane_id,local_x_ft,local_y_ft\n4,1,1,0,0\n4,3,1,0,1\n");
    try {
      parse_tracks(in);
      FAIL("expected a gap error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("vehicle 4") != std::string::npos);
    }
  }
  SUBCASE("malformed number names the line") {
    std::istringstream in("vehicle_id,frame_id,lane_id,local_x_ft,local_y_ft\n1,1,1,0,0\n1,2,1,abc,0\n");
    try {
      parse_tracks(in);
      FAIL("expected a parse error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
  }
  SUBCASE("missing column") {
    std::istringstream in("vehicle_id,frame_id,local_x_ft,local_y_ft\n1,1,0,0\n");
    CHECK_THROWS_AS(parse_tracks(in), DataError);
  }
}

TEST_CASE("serialize then parse is the identity") {
  ScenarioConfig c;
  c.n_vehicles = 8;
  c.n_frames = 120;
  const auto store = synth_scenarios(c, 3);
  std::stringstream csv;
  serialize_tracks(store, csv);
  CHECK(parse_tracks(csv) == store);

  std::stringstream bin;
  write_track_archive(store, bin);
  CHECK(read_track_archive(bin) == store);
}

TEST_CASE("track archive rejects a wrong magic") {
  std::stringstream bin("XXXX\x01\0\0\0");
  CHECK_THROWS_AS(read_track_archive(bin), DataError);
}

TEST_CASE("neighborhood window") {
  std::vector<Track> tracks{straight(1, 1, 5, 2, 18.0, 100.0, 0.0)};
  SUBCASE("ego alone") {
    const TrackStore store(tracks);
    CHECK(neighborhood(store, 1, 3).neighbors.empty());
  }
  SUBCASE("91 ft ahead in the same lane is outside") {
    tracks.push_back(straight(2, 1, 5, 2, 18.0, 191.0, 0.0));
    const TrackStore store(tracks);
    CHECK(neighborhood(store, 1, 3).neighbors.empty());
  }
  SUBCASE("30 ft behind in the left lane is inside") {
    tracks.push_back(straight(2, 1, 5, 1, 6.0, 70.0, 0.0));
    const TrackStore store(tracks);
    const auto snap = neighborhood(store, 1, 3);
    REQUIRE(snap.neighbors.size() == 1);
    CHECK(snap.neighbors[0].vehicle_id == 2);
    CHECK(snap.neighbors[0].rel_lon == doctest::Approx(-30.0));
    CHECK(snap.neighbors[0].rel_lat == doctest::Approx(-12.0));
    CHECK(snap.neighbors[0].lane_offset == -1);
  }
  SUBCASE("two lanes over is outside") {
    tracks.push_back(straight(2, 1, 5, 4, 42.0, 100.0, 0.0));
    const TrackStore store(tracks);
    CHECK(neighborhood(store, 1, 3).neighbors.empty());
  }
  SUBCASE("absent ego") {
    const TrackStore store(tracks);
    CHECK_THROWS_AS(neighborhood(store, 1, 9), DataError);
  }
}

TEST_CASE("neighborhood membership matches the window predicate in both directions") {
  ScenarioConfig c;
  c.n_vehicles = 20;
  c.n_frames = 60;
  const auto store = synth_scenarios(c, 21);
  for (const auto& [frame, ids] : store.frame_index()) {
    if (frame % 10 != 0) continue;
    for (auto a : ids)
      for (auto b : ids) {
        if (a == b) continue;
        const auto& pa = store.find(a)->at(frame);
        const auto& pb = store.find(b)->at(frame);
        const bool expected = in_sensing_window(pb.y_lon - pa.y_lon, pb.lane_id - pa.lane_id);
        const auto snap = neighborhood(store, a, frame);
        const bool present = std::any_of(snap.neighbors.begin(), snap.neighbors.end(),
                                         [b](const Neighbor& n) { return n.vehicle_id == b; });
        CHECK(present == expected);
      }
  }
}

TEST_CASE("lateral labels") {
  Track t = straight(1, 1, 200, 3, 30.0, 0.0, 50.0);
  SUBCASE("constant lane") { CHECK(label_lateral(t, 100) == Lateral::kSame); }
  SUBCASE("lane decrease is a left change") {
    for (auto& p : t.points)
      if (p.frame_id >= 110) p.lane_id = 2;
    CHECK(label_lateral(t, 100) == Lateral::kLeft);
    CHECK(label_lateral(t, 60) == Lateral::kSame);  // change lies beyond +40 frames
  }
  SUBCASE("lane increase is a right change") {
    for (auto& p : t.points)
      if (p.frame_id >= 80) p.lane_id = 4;
    CHECK(label_lateral(t, 100) == Lateral::kRight);
  }
  SUBCASE("window off the track end") {
    for (auto& p : t.points)
      if (p.frame_id >= 190) p.lane_id = 2;
    CHECK_FALSE(has_lateral_window(t, 180));
    CHECK(label_lateral(t, 180) == Lateral::kSame);
  }
}

TEST_CASE("longitudinal labels") {
  CHECK(label_longitudinal(straight(1, 1, 200, 2, 6.0, 0.0, 50.0), 100) == Longitudinal::kCruise);
  CHECK(label_longitudinal(speed_change(100, 50.0, 39.0), 100) == Longitudinal::kBrake);
  CHECK(label_longitudinal(speed_change(100, 50.0, 41.0), 100) == Longitudinal::kCruise);
  CHECK(current_speed(speed_change(100, 50.0, 39.0), 100) == doctest::Approx(50.0));
}

TEST_CASE("balancing") {
  std::vector<Lateral> lat;
  for (int i = 0; i < 100; ++i) lat.push_back(Lateral::kSame);
  for (int i = 0; i < 10; ++i) lat.push_back(Lateral::kLeft);
  SUBCASE("keep everything") { CHECK(balance_indices(lat, 1.0, 5).size() == lat.size()); }
  SUBCASE("20 percent of S, every L") {
    const auto keep = balance_indices(lat, 0.2, 5);
    CHECK(keep.size() == 30);
    CHECK(std::is_sorted(keep.begin(), keep.end()));
    CHECK(std::count_if(keep.begin(), keep.end(), [](std::size_t i) { return i >= 100; }) == 10);
    CHECK(balance_indices(lat, 0.2, 5) == keep);
    CHECK(balance_indices(lat, 0.2, 6) != keep);
  }
  SUBCASE("no S samples") {
    std::vector<Lateral> only_r(7, Lateral::kRight);
    CHECK(balance_indices(only_r, 0.1, 1).size() == 7);
  }
  SUBCASE("invalid fraction") {
    CHECK_THROWS_AS(balance_indices(lat, 0.0, 1), UsageError);
    CHECK_THROWS_AS(balance_indices(lat, 1.5, 1), UsageError);
  }
}

TEST_CASE("synthetic traffic") {
  SUBCASE("deterministic per seed") {
    ScenarioConfig c;
    CHECK(synth_scenarios(c, 9) == synth_scenarios(c, 9));
    CHECK_FALSE(synth_scenarios(c, 9) == synth_scenarios(c, 10));
  }
  SUBCASE("single cruising vehicle is a straight line") {
    ScenarioConfig c;
    c.n_vehicles = 1;
    c.n_frames = 100;
    c.car_following = false;
    c.lane_change_rate = 0.0;
    c.brake_rate = 0.0;
    const auto store = synth_scenarios(c, 1);
    const auto& pts = store.tracks().begin()->second.points;
    REQUIRE(pts.size() == 100);
    const double dy = pts[1].y_lon - pts[0].y_lon;
    for (std::size_t i = 1; i < pts.size(); ++i) {
      CHECK(pts[i].x_lat == pts[0].x_lat);
      CHECK(pts[i].y_lon - pts[i - 1].y_lon == doctest::Approx(dy));
    }
  }
  SUBCASE("scripted manoeuvres carry their labels") {
    ScenarioConfig c;
    c.n_vehicles = 6;
    c.n_frames = 300;
    c.lane_change_rate = 0.0;
    c.brake_rate = 0.0;
    // Vehicle i starts in lane i % 3 + 1.
    c.scripted = {{1, 150, EventKind::kLeftChange}, {4, 150, EventKind::kRightChange}, {0, 150, EventKind::kBrake}};
    const auto store = synth_scenarios(c, 4);
    CHECK(label_lateral(*store.find(2), 150) == Lateral::kLeft);
    CHECK(label_lateral(*store.find(5), 150) == Lateral::kRight);
    CHECK(label_longitudinal(*store.find(1), 150) == Longitudinal::kBrake);
    CHECK(label_lateral(*store.find(3), 150) == Lateral::kSame);
  }
  SUBCASE("over capacity") {
    ScenarioConfig c;
    c.n_vehicles = 10000;
    CHECK_THROWS_AS(synth_scenarios(c, 1), UsageError);
  }
}
