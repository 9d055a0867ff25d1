#include "dstcan/grid.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "dstcan/binary_io.hpp"
#include "dstcan/errors.hpp"

namespace dstcan::grid {

GridConfig GridConfig::for_horizon(int horizon) {
  GridConfig c;
  c.horizon = horizon;
  c.validate();
  return c;
}

void GridConfig::validate() const {
  if (n_rows < 1 || n_rows % 2 == 0) throw UsageError("grid needs an odd number of rows");
  if (n_lanes != 3) throw UsageError("grid must span exactly three lanes");
  if (n_past < 1) throw UsageError("grid needs at least one past frame");
  if (horizon < 1 || horizon > kMaxCertaintyIndex + 1)
    throw UsageError("horizon must lie in [1, " + std::to_string(kMaxCertaintyIndex + 1) + "] frames, got " +
                     std::to_string(horizon));
  if (!(range_ft > 0.0) || !(lane_width_ft > 0.0)) throw UsageError("grid range and lane width must be positive");
}

ContextGrid::ContextGrid(int n_rows, int n_lanes, int depth, std::int32_t frame)
    : rows_(n_rows), lanes_(n_lanes), depth_(depth), frame_(frame),
      values_(static_cast<std::size_t>(n_rows) * n_lanes * depth, 0.0) {
  if (n_rows < 1 || n_lanes < 1 || depth < 1) throw UsageError("grid dimensions must be positive");
}

Slice ContextGrid::slice(int t) const {
  Slice s{rows_, lanes_, std::vector<double>(static_cast<std::size_t>(rows_ * lanes_))};
  for (int r = 0; r < rows_; ++r)
    for (int l = 0; l < lanes_; ++l) s.cells[static_cast<std::size_t>(r * lanes_ + l)] = at(r, l, t);
  return s;
}

double ContextGrid::slice_sum(int t) const {
  double sum = 0.0;
  for (int r = 0; r < rows_; ++r)
    for (int l = 0; l < lanes_; ++l) sum += at(r, l, t);
  return sum;
}

double certainty(int t) {
  if (t < 0 || t > kMaxCertaintyIndex)
    throw UsageError("certainty index must lie in [0, 50], got " + std::to_string(t));
  return 0.47 + std::sqrt(0.236 - 0.04 * (t / 10.0));
}

int row_coordinate(double rel_lon, const GridConfig& config) {
  const int row = static_cast<int>(std::floor((rel_lon + config.range_ft) / config.cell_length()));
  if (row == config.n_rows && rel_lon <= config.range_ft) return config.n_rows - 1;
  return row;
}

int lane_offset_from_lateral(double rel_lat, const GridConfig& config) {
  return static_cast<int>(std::floor((rel_lat + 0.5 * config.lane_width_ft) / config.lane_width_ft));
}

std::optional<Cell> cell_index_lane(int lane_offset, double rel_lon, const GridConfig& config) {
  if (!(std::abs(rel_lon) <= config.range_ft) || lane_offset < -1 || lane_offset > 1) return std::nullopt;
  const int row = row_coordinate(rel_lon, config);
  if (row < 0 || row >= config.n_rows) return std::nullopt;
  return Cell{row, lane_offset + config.ego_lane()};
}

std::optional<Cell> cell_index(double rel_lat, double rel_lon, const GridConfig& config) {
  return cell_index_lane(lane_offset_from_lateral(rel_lat, config), rel_lon, config);
}

void encode_past(ContextGrid& grid, std::span<const Snapshot> history, const GridConfig& config) {
  if (static_cast<int>(history.size()) != config.n_past)
    throw UsageError("encode_past expects " + std::to_string(config.n_past) + " snapshots, got " +
                     std::to_string(history.size()));
  for (int t = 0; t < config.n_past; ++t)
    for (const auto& n : history[static_cast<std::size_t>(t)].neighbors)
      if (auto cell = cell_index_lane(n.lane_offset, n.rel_lon, config)) grid.at(cell->row, cell->lane, t) = 1.0;
}

void encode_future(ContextGrid& grid, std::span<const PredictedVehicle> predicted, const mnn::Position& ego_position,
                   const GridConfig& config) {
  const int T = config.horizon;
  for (const auto& v : predicted) {
    if (static_cast<int>(v.future.size()) != T)
      throw UsageError("vehicle " + std::to_string(v.vehicle_id) + " has " + std::to_string(v.future.size()) +
                       " predicted frames, grid horizon is " + std::to_string(T));
    for (int tau = 0; tau < T; ++tau) {
      const auto& p = v.future[static_cast<std::size_t>(tau)];
      const int row = row_coordinate(p.y - ego_position.y, config);
      const int lane_offset = v.lane_offset ? *v.lane_offset + lane_offset_from_lateral(p.x - v.current.x, config)
                                            : lane_offset_from_lateral(p.x - ego_position.x, config);
      const int lane = lane_offset + config.ego_lane();
      const double centre = certainty(tau);
      const double spread = (1.0 - centre) / 8.0;
      const int t = config.n_past + tau;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dl = -1; dl <= 1; ++dl) {
          const int r = row + dr, l = lane + dl;
          if (r < 0 || r >= config.n_rows || l < 0 || l >= config.n_lanes) continue;
          grid.at(r, l, t) += (dr == 0 && dl == 0) ? centre : spread;
        }
      }
    }
  }
  for (int r = 0; r < config.n_rows; ++r)
    for (int l = 0; l < config.n_lanes; ++l)
      for (int t = config.n_past; t < config.depth(); ++t) grid.at(r, l, t) = std::min(1.0, grid.at(r, l, t));
}

bool has_ego_history(const TrackStore& store, std::int32_t ego, std::int32_t frame, const GridConfig& config) {
  const Track* track = store.find(ego);
  return track != nullptr && track->covers(frame - config.n_past + 1, frame);
}

ContextGrid build_context_grid(const TrackStore& store, std::int32_t ego, std::int32_t frame,
                               const mnn::MnnParams& predictor, const GridConfig& config) {
  config.validate();
  if (!has_ego_history(store, ego, frame, config))
    throw DataError("insufficient ego history: vehicle " + std::to_string(ego) + " needs frames " +
                    std::to_string(frame - config.n_past + 1) + ".." + std::to_string(frame));
  ContextGrid grid(config, frame);

  std::vector<Snapshot> history;
  history.reserve(static_cast<std::size_t>(config.n_past));
  for (int k = 0; k < config.n_past; ++k) history.push_back(neighborhood(store, ego, frame - config.n_past + 1 + k));
  encode_past(grid, history, config);

  const auto& ego_now = store.find(ego)->at(frame);
  std::vector<PredictedVehicle> predicted;
  for (const auto& n : history.back().neighbors) {
    const Track& track = *store.find(n.vehicle_id);
    const auto first = std::max(track.first_frame(), frame - config.n_past + 1);
    if (frame - first + 1 < 2) continue;
    const auto begin = track.points.begin() + (first - track.first_frame());
    const auto end = track.points.begin() + (frame - track.first_frame() + 1);
    const std::span<const TrackPoint> hist(&*begin, static_cast<std::size_t>(end - begin));
    const auto& now = track.at(frame);
    predicted.push_back({n.vehicle_id, n.lane_offset, {now.x_lat, now.y_lon},
                         mnn::mnn_predict_lookahead(predictor, hist, config.horizon)});
  }
  encode_future(grid, predicted, {ego_now.x_lat, ego_now.y_lon}, config);
  return grid;
}

// ---------------------------------------------------------------------------

std::uint64_t sample_id(std::int32_t ego, std::int32_t frame) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(ego)) << 32) | static_cast<std::uint32_t>(frame);
}
std::int32_t sample_ego(std::uint64_t id) { return static_cast<std::int32_t>(static_cast<std::uint32_t>(id >> 32)); }
std::int32_t sample_frame(std::uint64_t id) { return static_cast<std::int32_t>(static_cast<std::uint32_t>(id)); }

namespace {

void write_header(std::ostream& out, std::uint32_t count, const GridDims& dims) {
  binio::put_magic(out, "DSTG");
  binio::put_u32(out, kGridArchiveVersion);
  binio::put_u32(out, count);
  binio::put_u32(out, dims.rows);
  binio::put_u32(out, dims.lanes);
  binio::put_u32(out, dims.depth);
}

constexpr std::streamoff kCountOffset = 8;

}  // namespace

GridArchiveWriter::GridArchiveWriter(const std::string& path, GridDims dims)
    : out_(path, std::ios::binary | std::ios::trunc), path_(path), dims_(dims) {
  if (!out_) throw DataError("cannot write " + path);
  write_header(out_, 0, dims_);
}

void GridArchiveWriter::add(std::uint64_t id, const ContextGrid& grid) {
  if (static_cast<std::uint32_t>(grid.rows()) != dims_.rows || static_cast<std::uint32_t>(grid.lanes()) != dims_.lanes ||
      static_cast<std::uint32_t>(grid.depth()) != dims_.depth)
    throw UsageError("grid dimensions differ from the archive's");
  binio::put_u64(out_, id);
  for (double v : grid.values()) binio::put_f32(out_, static_cast<float>(v));
  ++count_;
}

void GridArchiveWriter::finish() {
  if (finished_) return;
  finished_ = true;
  out_.seekp(kCountOffset);
  binio::put_u32(out_, count_);
  out_.close();
  if (!out_) throw DataError("failed writing " + path_);
}

GridArchiveWriter::~GridArchiveWriter() {
  try {
    finish();
  } catch (...) {
  }
}

ContextGrid GridArchive::grid(std::size_t i) const {
  ContextGrid g(static_cast<int>(dims.rows), static_cast<int>(dims.lanes), static_cast<int>(dims.depth),
                sample_frame(ids[i]));
  auto src = sample(i);
  auto dst = g.values();
  std::copy(src.begin(), src.end(), dst.begin());
  return g;
}

void write_grid_archive(const std::string& path, const GridArchive& archive) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  write_header(out, static_cast<std::uint32_t>(archive.size()), archive.dims);
  for (std::size_t i = 0; i < archive.size(); ++i) {
    binio::put_u64(out, archive.ids[i]);
    for (float v : archive.sample(i)) binio::put_f32(out, v);
  }
  if (!out) throw DataError("failed writing " + path);
}

GridArchive read_grid_archive(std::istream& in) {
  binio::expect_magic(in, "DSTG");
  const auto version = binio::get_u32(in);
  if (version != kGridArchiveVersion) throw DataError("unsupported grid archive version " + std::to_string(version));
  GridArchive a;
  const auto count = binio::get_u32(in);
  a.dims.rows = binio::get_u32(in);
  a.dims.lanes = binio::get_u32(in);
  a.dims.depth = binio::get_u32(in);
  if (a.dims.cells() == 0) throw DataError("grid archive has zero-sized dims");
  a.ids.resize(count);
  a.values.resize(count * a.dims.cells());
  for (std::uint32_t i = 0; i < count; ++i) {
    a.ids[i] = binio::get_u64(in);
    float* dst = a.values.data() + i * a.dims.cells();
    for (std::size_t c = 0; c < a.dims.cells(); ++c) dst[c] = binio::get_f32(in);
  }
  return a;
}

GridArchive read_grid_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  try {
    return read_grid_archive(in);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

void write_labels(std::ostream& out, std::span<const LabelRecord> labels) {
  out << "sample_id,ego_id,frame,human_lateral,human_longitudinal,gt_lateral,gt_longitudinal,split,human_complete\n";
  for (const auto& r : labels) {
    out << r.sample_id << ',' << sample_ego(r.sample_id) << ',' << sample_frame(r.sample_id) << ','
        << to_char(r.human.lateral) << ',' << to_char(r.human.longitudinal) << ',' << to_char(r.gt.lateral) << ','
        << to_char(r.gt.longitudinal) << ',' << (r.split == Split::kTrain ? "train" : "test") << ','
        << (r.human_complete ? 1 : 0) << '\n';
  }
}

std::vector<LabelRecord> read_labels(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || line.rfind("sample_id,", 0) != 0) throw DataError("label file lacks its header");
  std::vector<LabelRecord> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    try {
      if (f.size() != 9 || f[3].size() != 1 || f[4].size() != 1 || f[5].size() != 1 || f[6].size() != 1)
        throw UsageError("wrong field count");
      LabelRecord r;
      r.sample_id = std::stoull(f[0]);
      r.human = {lateral_from_char(f[3][0]), longitudinal_from_char(f[4][0])};
      r.gt = {lateral_from_char(f[5][0]), longitudinal_from_char(f[6][0])};
      if (f[7] == "train") r.split = Split::kTrain;
      else if (f[7] == "test") r.split = Split::kTest;
      else throw UsageError("bad split");
      r.human_complete = f[8] == "1";
      out.push_back(r);
    } catch (const std::exception&) {
      throw DataError("label file line " + std::to_string(line_no) + ": malformed record");
    }
  }
  return out;
}

void write_labels(const std::string& path, std::span<const LabelRecord> labels) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  write_labels(out, labels);
  if (!out) throw DataError("failed writing " + path);
}

std::vector<LabelRecord> read_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return read_labels(in);
}

}  // namespace dstcan::grid
