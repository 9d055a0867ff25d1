#pragma once

#include <cstdint>
#include <fstream>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dstcan/ingest.hpp"
#include "dstcan/maneuver.hpp"
#include "dstcan/mnn.hpp"

// Spatio-temporal context grid around an ego vehicle: binary occupancy for the
// past frames followed by probabilistic occupancy of predicted future frames.
namespace dstcan::grid {

inline constexpr int kMaxCertaintyIndex = 50;

struct GridConfig {
  int n_rows = 13;  // longitudinal cells over +/- range_ft; row 0 is the rearmost
  int n_lanes = 3;  // left, ego, right
  int n_past = 30;  // frames t-29 .. t
  int horizon = 30;
  double range_ft = kSensingRangeFt;
  double lane_width_ft = 15.0;

  static GridConfig for_horizon(int horizon);
  double cell_length() const { return 2.0 * range_ft / n_rows; }
  int depth() const { return n_past + horizon; }
  int ego_row() const { return n_rows / 2; }
  int ego_lane() const { return n_lanes / 2; }
  // Throws UsageError on inconsistent geometry or a horizon beyond 50 frames.
  void validate() const;

  friend bool operator==(const GridConfig&, const GridConfig&) = default;
};

struct Cell {
  int row = 0;
  int lane = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

// One time slice, row-major over (row, lane).
struct Slice {
  int n_rows = 0;
  int n_lanes = 0;
  std::vector<double> cells;
  double at(int row, int lane) const { return cells[static_cast<std::size_t>(row * n_lanes + lane)]; }
};

class ContextGrid {
 public:
  ContextGrid() = default;
  ContextGrid(int n_rows, int n_lanes, int depth, std::int32_t frame = 0);
  explicit ContextGrid(const GridConfig& config, std::int32_t frame = 0)
      : ContextGrid(config.n_rows, config.n_lanes, config.depth(), frame) {}

  int rows() const { return rows_; }
  int lanes() const { return lanes_; }
  int depth() const { return depth_; }
  std::int32_t frame() const { return frame_; }

  // Row-major over (row, lane, time).
  std::size_t index(int row, int lane, int t) const {
    return (static_cast<std::size_t>(row) * lanes_ + lane) * depth_ + t;
  }
  double& at(int row, int lane, int t) { return values_[index(row, lane, t)]; }
  double at(int row, int lane, int t) const { return values_[index(row, lane, t)]; }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  Slice slice(int t) const;
  double slice_sum(int t) const;

  friend bool operator==(const ContextGrid&, const ContextGrid&) = default;

 private:
  int rows_ = 0, lanes_ = 0, depth_ = 0;
  std::int32_t frame_ = 0;
  std::vector<double> values_;
};

// P(t) = 0.47 + sqrt(0.236 - 0.04 t / 10) for future frame index 0 <= t <= 50.
double certainty(int t);

// Longitudinal cell for a relative offset, unbounded: values outside
// [0, n_rows) are off-grid. +range_ft belongs to the front row.
int row_coordinate(double rel_lon, const GridConfig& config);
// Lane offset from lateral feet, bucketing +/- half a lane width around 0.
int lane_offset_from_lateral(double rel_lat, const GridConfig& config);

// Cell from lateral and longitudinal feet; nullopt when off-grid.
std::optional<Cell> cell_index(double rel_lat, double rel_lon, const GridConfig& config);
// Cell from a lane-id offset and longitudinal feet.
std::optional<Cell> cell_index_lane(int lane_offset, double rel_lon, const GridConfig& config);

// Writes past slices 0 .. n_past-1 from oldest-first snapshots.
void encode_past(ContextGrid& grid, std::span<const Snapshot> history, const GridConfig& config);

struct PredictedVehicle {
  std::int32_t vehicle_id = 0;
  // Lane-id offset at the current frame; anchors lateral bucketing of predictions.
  std::optional<int> lane_offset;
  mnn::Position current;
  std::vector<mnn::Position> future;  // frames t+1 .. t+horizon
};

// Stamps P(tau) on each predicted cell and (1 - P(tau)) / 8 on its eight
// neighbours, accumulating across vehicles and saturating at 1. Mass landing
// outside the grid is dropped.
void encode_future(ContextGrid& grid, std::span<const PredictedVehicle> predicted, const mnn::Position& ego_position,
                   const GridConfig& config);

bool has_ego_history(const TrackStore& store, std::int32_t ego, std::int32_t frame, const GridConfig& config);

// Throws DataError when the ego lacks n_past frames of history ending at `frame`.
ContextGrid build_context_grid(const TrackStore& store, std::int32_t ego, std::int32_t frame,
                               const mnn::MnnParams& predictor, const GridConfig& config);

// ---------------------------------------------------------------------------
// Grid archive: "DSTG", version, sample count, dims, then per sample an id and
// row-major float32 values.

inline constexpr std::uint32_t kGridArchiveVersion = 1;

std::uint64_t sample_id(std::int32_t ego, std::int32_t frame);
std::int32_t sample_ego(std::uint64_t id);
std::int32_t sample_frame(std::uint64_t id);

struct GridDims {
  std::uint32_t rows = 13, lanes = 3, depth = 60;
  std::size_t cells() const { return static_cast<std::size_t>(rows) * lanes * depth; }
  friend bool operator==(const GridDims&, const GridDims&) = default;
};

class GridArchiveWriter {
 public:
  GridArchiveWriter(const std::string& path, GridDims dims);
  void add(std::uint64_t id, const ContextGrid& grid);
  // Patches the sample count; called by the destructor if omitted.
  void finish();
  ~GridArchiveWriter();
  GridArchiveWriter(const GridArchiveWriter&) = delete;
  GridArchiveWriter& operator=(const GridArchiveWriter&) = delete;

 private:
  std::ofstream out_;
  std::string path_;
  GridDims dims_;
  std::uint32_t count_ = 0;
  bool finished_ = false;
};

struct GridArchive {
  GridDims dims;
  std::vector<std::uint64_t> ids;
  std::vector<float> values;  // ids.size() * dims.cells()

  std::size_t size() const { return ids.size(); }
  std::span<const float> sample(std::size_t i) const { return std::span(values).subspan(i * dims.cells(), dims.cells()); }
  ContextGrid grid(std::size_t i) const;
};

void write_grid_archive(const std::string& path, const GridArchive& archive);
GridArchive read_grid_archive(const std::string& path);
GridArchive read_grid_archive(std::istream& in);

enum class Split : std::uint8_t { kTrain, kTest };

struct LabelRecord {
  std::uint64_t sample_id = 0;
  ManeuverLabel human;
  ManeuverLabel gt;
  Split split = Split::kTrain;
  // False when the track did not cover the human label windows.
  bool human_complete = true;

  friend bool operator==(const LabelRecord&, const LabelRecord&) = default;
};

void write_labels(std::ostream& out, std::span<const LabelRecord> labels);
std::vector<LabelRecord> read_labels(std::istream& in);
void write_labels(const std::string& path, std::span<const LabelRecord> labels);
std::vector<LabelRecord> read_labels(const std::string& path);

}  // namespace dstcan::grid
