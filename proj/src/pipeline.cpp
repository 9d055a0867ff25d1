#include "dstcan/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "dstcan/gtrules.hpp"

namespace dstcan::pipeline {

namespace {

std::uint64_t require_seed(const std::optional<std::uint64_t>& seed, const char* stage) {
  if (!seed) throw UsageError(std::string(stage) + " needs an explicit seed (--seed or config)");
  return *seed;
}

std::ifstream open_in(const std::string& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw DataError("cannot open " + path);
  return in;
}

std::ofstream open_out(const std::string& path, bool binary = false) {
  if (path.empty()) throw UsageError("missing output path");
  std::ofstream out(path, (binary ? std::ios::binary : std::ios::openmode{}) | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  return out;
}

IngestSummary summarize(const TrackStore& store) {
  return {store.tracks().size(), store.point_count(), store.frame_index().size()};
}

std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// Congestion-tagged tracks: low and high train, medium tests. Untagged tracks
// get a seeded split by vehicle.
std::map<std::int32_t, grid::Split> assign_splits(const TrackStore& store, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw UsageError("test fraction must lie in [0, 1)");
  std::map<std::int32_t, grid::Split> split;
  std::vector<std::int32_t> untagged;
  for (const auto& [id, t] : store.tracks()) {
    switch (t.congestion) {
      case Congestion::kMedium: split[id] = grid::Split::kTest; break;
      case Congestion::kLow:
      case Congestion::kHigh: split[id] = grid::Split::kTrain; break;
      case Congestion::kUntagged: untagged.push_back(id); break;
    }
  }
  Rng rng(seed);
  rng.shuffle(untagged.begin(), untagged.end());
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(untagged.size())));
  for (std::size_t i = 0; i < untagged.size(); ++i)
    split[untagged[i]] = i < n_test ? grid::Split::kTest : grid::Split::kTrain;
  return split;
}

}  // namespace

TrackStore synth_tracks(const SynthOptions& options) {
  ScenarioConfig c;
  c.n_vehicles = options.vehicles;
  c.n_frames = options.frames;
  c.n_lanes = options.lanes;
  return synth_scenarios(c, require_seed(options.seed, "synthetic traffic"));
}

TrackStore load_tracks(const std::string& path) {
  auto in = open_in(path, true);
  try {
    return read_track_archive(in);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

IngestSummary cmd_ingest(const IngestOptions& options) {
  TrackStore store;
  if (options.synth) {
    store = synth_tracks(*options.synth);
  } else {
    if (options.inputs.empty()) throw UsageError("ingest needs at least one input file or --synth");
    std::vector<Track> all;
    const bool shift = options.inputs.size() > 1;
    for (std::size_t k = 0; k < options.inputs.size(); ++k) {
      const auto& spec = options.inputs[k];
      auto in = open_in(spec.path);
      TrackStore part;
      try {
        part = parse_tracks(in, spec.congestion);
      } catch (const DataError& e) {
        throw DataError(spec.path + ": " + e.what());
      }
      const auto offset = shift ? static_cast<std::int32_t>(k) * kIdStride : 0;
      for (auto [id, t] : part.tracks()) {
        if (shift && (id < 0 || id >= kIdStride))
          throw DataError(spec.path + ": vehicle id " + std::to_string(id) + " does not fit the per-file id range");
        t.vehicle_id += offset;
        for (auto& p : t.points) p.vehicle_id += offset;
        all.push_back(std::move(t));
      }
    }
    store = TrackStore(std::move(all));
  }
  if (store.empty()) throw DataError("input holds no track records");
  auto out = open_out(options.output, true);
  write_track_archive(store, out);
  if (!out) throw DataError("failed writing " + options.output);
  return summarize(store);
}

IngestSummary cmd_synth(const SynthOptions& options, const std::string& csv_out) {
  const auto store = synth_tracks(options);
  auto out = open_out(csv_out);
  serialize_tracks(store, out);
  if (!out) throw DataError("failed writing " + csv_out);
  return summarize(store);
}

TrainMnnSummary cmd_train_mnn(const TrainMnnOptions& o) {
  const auto seed = require_seed(o.seed, "train-mnn");
  const auto store = load_tracks(o.tracks);
  if (store.empty()) throw DataError(o.tracks + ": archive holds no tracks");
  const auto split = assign_splits(store, o.holdout_fraction, seed);

  std::vector<Track> train, test;
  for (const auto& [id, t] : store.tracks()) {
    if (t.points.size() < 3) continue;
    (split.at(id) == grid::Split::kTrain ? train : test).push_back(t);
  }
  if (train.empty()) throw DataError(o.tracks + ": no training track has at least 3 points");
  if (o.max_train_tracks > 0 && train.size() > o.max_train_tracks) {
    Rng rng(seed + 1);
    rng.shuffle(train.begin(), train.end());
    train.resize(o.max_train_tracks);
    std::sort(train.begin(), train.end(), [](const Track& a, const Track& b) { return a.vehicle_id < b.vehicle_id; });
  }

  mnn::TrainConfig tc;
  tc.epochs = o.epochs;
  tc.lr = o.lr;
  tc.window = o.window;
  tc.optimizer = o.optimizer;
  tc.refine_iterations = o.refine_iterations;
  tc.seed = seed;
  const auto init = mnn::MnnParams::random(seed, o.hidden);
  const auto result = mnn::mnn_train(init, train, tc);
  mnn::save_checkpoint(result.params, o.output);

  TrainMnnSummary s;
  s.train_tracks = train.size();
  s.test_tracks = test.size();
  s.train_one_step_rmse = mnn::one_step_rmse(result.params, train);
  if (!test.empty()) {
    s.test_one_step_rmse = mnn::one_step_rmse(result.params, test);
    const bool long_enough = std::any_of(test.begin(), test.end(), [&](const Track& t) {
      return static_cast<int>(t.points.size()) >= o.rollout_history + o.rollout_horizon;
    });
    if (long_enough) s.test_rollout_rmse = mnn::rollout_rmse(result.params, test, o.rollout_history, o.rollout_horizon);
  }
  return s;
}

BuildGridsSummary cmd_build_grids(const BuildGridsOptions& o) {
  const auto seed = require_seed(o.seed, "build-grids");
  if (o.horizon != 10 && o.horizon != 30 && o.horizon != 50)
    throw UsageError("horizon must be 10, 30 or 50 frames, got " + std::to_string(o.horizon));
  if (o.stride < 1) throw UsageError("stride must be >= 1");
  if (!(o.keep_fraction > 0.0 && o.keep_fraction <= 1.0)) throw UsageError("keep fraction must lie in (0, 1]");
  const auto config = grid::GridConfig::for_horizon(o.horizon);
  const auto store = load_tracks(o.tracks);
  if (store.empty()) throw DataError(o.tracks + ": archive holds no tracks");
  const auto predictor = mnn::load_checkpoint(o.mnn_checkpoint);
  const auto split = assign_splits(store, o.test_fraction, seed);

  struct Candidate {
    std::int32_t ego, frame;
    ManeuverLabel human;
    grid::Split split;
  };
  BuildGridsSummary s;
  s.dims = {static_cast<std::uint32_t>(config.n_rows), static_cast<std::uint32_t>(config.n_lanes),
            static_cast<std::uint32_t>(config.depth())};
  std::vector<Candidate> train, test;
  for (const auto& [id, track] : store.tracks()) {
    for (auto f = track.first_frame(); f <= track.last_frame(); f += o.stride) {
      ++s.candidates;
      if (!grid::has_ego_history(store, id, f, config)) {
        ++s.skipped_history;
        continue;
      }
      if (!has_lateral_window(track, f) || !has_longitudinal_window(track, f)) {
        ++s.skipped_window;
        continue;
      }
      const auto sp = split.at(id);
      (sp == grid::Split::kTrain ? train : test).push_back({id, f, human_label(track, f), sp});
    }
  }

  std::vector<Lateral> laterals;
  laterals.reserve(train.size());
  for (const auto& c : train) laterals.push_back(c.human.lateral);
  const auto keep = balance_indices(laterals, o.keep_fraction, seed + 1);
  s.dropped_balance = train.size() - keep.size();

  std::vector<Candidate> chosen;
  chosen.reserve(keep.size() + test.size());
  for (auto i : keep) chosen.push_back(train[i]);
  chosen.insert(chosen.end(), test.begin(), test.end());
  std::sort(chosen.begin(), chosen.end(),
            [](const Candidate& a, const Candidate& b) { return std::tie(a.ego, a.frame) < std::tie(b.ego, b.frame); });

  std::vector<grid::LabelRecord> labels;
  labels.reserve(chosen.size());
  {
    grid::GridArchiveWriter writer(o.grids_out, s.dims);
    for (const auto& c : chosen) {
      const auto g = grid::build_context_grid(store, c.ego, c.frame, predictor, config);
      const auto id = grid::sample_id(c.ego, c.frame);
      writer.add(id, g);
      labels.push_back({id, c.human, gtrules::gt_label(g, config), c.split, true});
      ++(c.split == grid::Split::kTrain ? s.train : s.test);
    }
    writer.finish();
  }
  grid::write_labels(o.labels_out, labels);
  s.written = chosen.size();
  return s;
}

std::string to_string(LabelSource s) { return s == LabelSource::kGt ? "gt" : "human"; }

LabelSource label_source_from_string(const std::string& s) {
  if (s == "gt") return LabelSource::kGt;
  if (s == "human") return LabelSource::kHuman;
  throw UsageError("label source must be 'gt' or 'human', got '" + s + "'");
}

std::vector<grid::LabelRecord> labels_for(const grid::GridArchive& archive,
                                          const std::vector<grid::LabelRecord>& labels) {
  std::unordered_map<std::uint64_t, const grid::LabelRecord*> by_id;
  by_id.reserve(labels.size());
  for (const auto& l : labels) by_id.emplace(l.sample_id, &l);
  std::vector<grid::LabelRecord> out;
  out.reserve(archive.size());
  for (auto id : archive.ids) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw DataError("grid sample ego " + std::to_string(grid::sample_ego(id)) + " frame " +
                      std::to_string(grid::sample_frame(id)) + " has no label record");
    out.push_back(*it->second);
  }
  return out;
}

namespace {

grid::GridArchive load_grids(const std::string& path) {
  try {
    return grid::read_grid_archive(path);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

std::vector<grid::LabelRecord> load_labels(const std::string& path) {
  try {
    return grid::read_labels(path);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

std::string dims_string(std::uint32_t r, std::uint32_t l, std::uint32_t d) {
  return std::to_string(r) + "x" + std::to_string(l) + "x" + std::to_string(d);
}

}  // namespace

TrainDecisionSummary cmd_train_decision(const TrainDecisionOptions& o) {
  const auto seed = require_seed(o.seed, "train-decision");
  const auto archive = load_grids(o.grids);
  if (archive.size() == 0) throw DataError(o.grids + ": grid archive is empty");
  const auto labels = labels_for(archive, load_labels(o.labels));

  net::Dataset data;
  for (std::size_t i = 0; i < archive.size(); ++i) {
    if (labels[i].split != grid::Split::kTrain) continue;
    data.add(archive.ids[i], archive.sample(i), o.label_source == LabelSource::kGt ? labels[i].gt : labels[i].human);
  }
  if (data.size() == 0) throw DataError(o.grids + ": no training-split samples");

  const auto arch = net::Architecture::for_grid(static_cast<int>(archive.dims.rows),
                                                static_cast<int>(archive.dims.lanes),
                                                static_cast<int>(archive.dims.depth));
  net::TrainConfig tc;
  tc.epochs = o.epochs;
  tc.batch = o.batch;
  tc.rmsprop = o.rmsprop;
  tc.seed = seed;
  tc.regularize = o.regularize;
  const auto result = net::train_regularized(net::DecisionNetParams::random(arch, seed), data, tc, o.on_epoch);
  net::save_checkpoint(result.params, o.output);
  if (!o.loss_log.empty()) {
    auto out = open_out(o.loss_log);
    out << "epoch,loss\n";
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
      out << e + 1 << ',' << format_double(result.epoch_loss[e]) << '\n';
    if (!out) throw DataError("failed writing " + o.loss_log);
  }
  return {data.size(), result.removed_ids.size(), result.retained_ids.size(), result.epoch_loss,
          result.empty_after_filter};
}

eval::EvalReport cmd_evaluate(const EvaluateOptions& o) {
  if (o.split != "train" && o.split != "test" && o.split != "all")
    throw UsageError("split must be train, test or all, got '" + o.split + "'");
  const auto archive = load_grids(o.grids);
  const auto labels = labels_for(archive, load_labels(o.labels));
  const auto params = net::load_checkpoint(o.checkpoint);
  const auto& a = params.arch;
  if (static_cast<std::uint32_t>(a.rows) != archive.dims.rows ||
      static_cast<std::uint32_t>(a.lanes) != archive.dims.lanes ||
      static_cast<std::uint32_t>(a.depth) != archive.dims.depth)
    throw DataError("checkpoint expects " +
                    dims_string(static_cast<std::uint32_t>(a.rows), static_cast<std::uint32_t>(a.lanes),
                                static_cast<std::uint32_t>(a.depth)) +
                    " grids but " + o.grids + " holds " +
                    dims_string(archive.dims.rows, archive.dims.lanes, archive.dims.depth));

  net::Dataset data;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < archive.size(); ++i) {
    const bool want = o.split == "all" || (o.split == "train") == (labels[i].split == grid::Split::kTrain);
    if (!want) continue;
    data.add(archive.ids[i], archive.sample(i), labels[i].gt);
    rows.push_back(i);
  }
  const auto predicted = net::predict_all(params, data);
  std::vector<eval::LabeledSample> samples;
  samples.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& l = labels[rows[k]];
    samples.push_back({l.sample_id, l.human, l.gt, predicted[k]});
  }

  eval::ReportConfig rc;
  rc.horizon = static_cast<int>(archive.dims.depth) - grid::GridConfig{}.n_past;
  rc.label_source = to_string(o.label_source);
  rc.reference = o.reference;
  rc.split = o.split;
  rc.checkpoint = o.checkpoint;
  rc.loss_log = o.loss_log;
  auto report = eval::make_report(samples, rc);
  if (!o.report_out.empty()) eval::emit_report(report, o.report_out);
  if (!o.matrices_csv.empty()) eval::write_matrices_csv(report, o.matrices_csv);
  return report;
}

PipelineConfig PipelineConfig::parse(const std::string& text) {
  PipelineConfig c;
  try {
    c.doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!c.doc.is_object()) throw UsageError("config must be a JSON object");
  return c;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str());
  } catch (const UsageError& e) {
    throw UsageError(path + ": " + e.what());
  }
}

}  // namespace dstcan::pipeline
