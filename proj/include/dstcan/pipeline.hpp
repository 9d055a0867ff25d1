#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dstcan/decision_net.hpp"
#include "dstcan/errors.hpp"
#include "dstcan/eval.hpp"
#include "dstcan/grid.hpp"
#include "dstcan/ingest.hpp"
#include "dstcan/mnn.hpp"

// Subcommand implementations shared by the command-line tool and the tests.
namespace dstcan::pipeline {

// Vehicle ids of the k-th input file are shifted by k * kIdStride when several
// files are ingested together, so recordings with overlapping ids stay apart.
inline constexpr std::int32_t kIdStride = 1'000'000;

struct InputSpec {
  std::string path;
  Congestion congestion = Congestion::kUntagged;
};

struct SynthOptions {
  int vehicles = 30;
  int frames = 600;
  int lanes = 3;
  std::optional<std::uint64_t> seed;
};

struct IngestOptions {
  std::vector<InputSpec> inputs;
  std::optional<SynthOptions> synth;  // replaces inputs when set
  std::string output;
};

struct IngestSummary {
  std::size_t tracks = 0;
  std::size_t points = 0;
  std::size_t frames = 0;  // distinct frame ids
};

IngestSummary cmd_ingest(const IngestOptions& options);

TrackStore synth_tracks(const SynthOptions& options);
// Writes synthetic traffic as a five-column CSV.
IngestSummary cmd_synth(const SynthOptions& options, const std::string& csv_out);

TrackStore load_tracks(const std::string& path);

struct TrainMnnOptions {
  std::string tracks;
  std::string output;
  int epochs = 5000;
  double lr = 3e-2;
  int window = 40;
  int hidden = mnn::kDefaultHidden;
  mnn::Optimizer optimizer = mnn::Optimizer::kAdam;
  int refine_iterations = 2000;
  double holdout_fraction = 0.2;
  // Held-out rollouts warm up on this many frames and predict `rollout_horizon`.
  int rollout_history = 30;
  int rollout_horizon = 30;
  std::size_t max_train_tracks = 40;  // seeded subset bound; 0 keeps all
  std::optional<std::uint64_t> seed;
};

struct TrainMnnSummary {
  std::size_t train_tracks = 0;
  std::size_t test_tracks = 0;
  double train_one_step_rmse = 0.0;
  std::optional<double> test_one_step_rmse;
  std::optional<double> test_rollout_rmse;
};

TrainMnnSummary cmd_train_mnn(const TrainMnnOptions& options);

struct BuildGridsOptions {
  std::string tracks;
  std::string mnn_checkpoint;
  std::string grids_out;
  std::string labels_out;
  int horizon = 30;
  int stride = 5;              // frames between samples of one ego
  double keep_fraction = 1.0;  // share of human lane-keeping train samples kept
  double test_fraction = 0.2;  // untagged tracks only
  std::optional<std::uint64_t> seed;
};

struct BuildGridsSummary {
  grid::GridDims dims;
  std::size_t candidates = 0;
  std::size_t written = 0;
  std::size_t skipped_history = 0;  // fewer than n_past frames behind the sample
  std::size_t skipped_window = 0;   // track ends before the human label windows
  std::size_t dropped_balance = 0;
  std::size_t train = 0;
  std::size_t test = 0;
};

BuildGridsSummary cmd_build_grids(const BuildGridsOptions& options);

enum class LabelSource { kGt, kHuman };
std::string to_string(LabelSource s);
LabelSource label_source_from_string(const std::string& s);

struct TrainDecisionOptions {
  std::string grids;
  std::string labels;
  std::string output;
  std::string loss_log;  // "epoch,loss" lines; empty skips
  LabelSource label_source = LabelSource::kGt;
  bool regularize = true;
  int epochs = 12;
  int batch = 128;
  net::RmsPropConfig rmsprop;
  std::optional<std::uint64_t> seed;
  std::function<void(int, double)> on_epoch;
};

struct TrainDecisionSummary {
  std::size_t samples = 0;
  std::size_t removed = 0;
  std::size_t retained = 0;
  std::vector<double> epoch_loss;
  bool empty_after_filter = false;
};

TrainDecisionSummary cmd_train_decision(const TrainDecisionOptions& options);

struct EvaluateOptions {
  std::string grids;
  std::string labels;
  std::string checkpoint;
  std::string report_out;
  std::string matrices_csv;  // empty skips
  std::string split = "test";  // train, test or all
  eval::Reference reference = eval::Reference::kGt;
  LabelSource label_source = LabelSource::kGt;  // echoed only
  std::string loss_log;                          // echoed only
};

eval::EvalReport cmd_evaluate(const EvaluateOptions& options);

// Joins a grid archive with its label file on sample id. Throws DataError when
// an archive sample has no label.
std::vector<grid::LabelRecord> labels_for(const grid::GridArchive& archive, const std::vector<grid::LabelRecord>& labels);

// ---------------------------------------------------------------------------
// Configuration file: one JSON document whose sections fill the option structs.
// Flags given on the command line override it.

struct PipelineConfig {
  nlohmann::json doc = nlohmann::json::object();

  static PipelineConfig load(const std::string& path);
  static PipelineConfig parse(const std::string& text);

  // Value at a dotted path such as "decision.epochs"; nullopt when absent.
  template <typename T>
  std::optional<T> get(const std::string& dotted) const;
};

template <typename T>
std::optional<T> PipelineConfig::get(const std::string& dotted) const {
  const nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (start <= dotted.size()) {
    const auto dot = dotted.find('.', start);
    const auto key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key)) return std::nullopt;
    node = &node->at(key);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  try {
    return node->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw UsageError("config value '" + dotted + "' has the wrong type");
  }
}

}  // namespace dstcan::pipeline
