#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dstcan/errors.hpp"
#include "dstcan/pipeline.hpp"

namespace {

using dstcan::pipeline::PipelineConfig;

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

// Flag value when given on the command line, else the config entry, else the default.
template <typename T>
T pick(const CLI::Option* opt, const T& flag, const PipelineConfig& cfg, const std::string& key, const T& fallback) {
  if (opt->count() > 0) return flag;
  if (auto v = cfg.get<T>(key)) return *v;
  return fallback;
}

std::optional<std::uint64_t> pick_seed(const CLI::Option* opt, std::uint64_t flag, const PipelineConfig& cfg,
                                       const std::string& stage) {
  if (opt->count() > 0) return flag;
  if (auto v = cfg.get<std::uint64_t>("seeds." + stage)) return v;
  return cfg.get<std::uint64_t>("seed");
}

std::string require_path(const std::string& value, const char* what) {
  if (value.empty()) throw dstcan::UsageError(std::string("missing ") + what + " path");
  return value;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "n/a"; }

struct Synth {
  int vehicles = 30, frames = 600, lanes = 3;
  std::uint64_t seed = 0;
  CLI::Option *o_vehicles = nullptr, *o_frames = nullptr, *o_lanes = nullptr, *o_seed = nullptr;

  void add(CLI::App* cmd, const char* count_flag) {
    o_vehicles = cmd->add_option(count_flag, vehicles, "Number of synthetic vehicles");
    o_frames = cmd->add_option("--frames", frames, "Frames per synthetic scenario (10 Hz)");
    o_lanes = cmd->add_option("--lanes", lanes, "Number of synthetic lanes");
    o_seed = cmd->add_option("--seed", seed, "Random seed");
  }

  dstcan::pipeline::SynthOptions resolve(const PipelineConfig& cfg) const {
    dstcan::pipeline::SynthOptions s;
    s.vehicles = pick(o_vehicles, vehicles, cfg, "synth.vehicles", s.vehicles);
    s.frames = pick(o_frames, frames, cfg, "synth.frames", s.frames);
    s.lanes = pick(o_lanes, lanes, cfg, "synth.lanes", s.lanes);
    s.seed = pick_seed(o_seed, seed, cfg, "synth");
    return s;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-aware manoeuvre decisions from highway trajectories"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON configuration file; flags override it")->check(CLI::ExistingFile);

  std::function<void(const PipelineConfig&)> run;

  // ingest ------------------------------------------------------------------
  auto* ingest = app.add_subcommand("ingest", "Parse trajectory CSV files (or synthesize traffic) into a track archive");
  std::vector<std::string> ingest_inputs, ingest_tags;
  std::string ingest_out;
  Synth ingest_synth;
  ingest->add_option("--input", ingest_inputs, "Trajectory CSV; repeat for several files");
  ingest->add_option("--congestion", ingest_tags, "Congestion tag per input: low, medium, high or untagged");
  ingest_synth.add(ingest, "--synth");
  auto* o_ingest_out = ingest->add_option("--out", ingest_out, "Output track archive");
  ingest->callback([&] {
    run = [&](const PipelineConfig& cfg) {
      dstcan::pipeline::IngestOptions o;
      if (ingest_synth.o_vehicles->count() > 0) {
        o.synth = ingest_synth.resolve(cfg);
      } else {
        if (!ingest_tags.empty() && ingest_tags.size() != ingest_inputs.size())
          throw dstcan::UsageError("give one --congestion tag per --input or none");
        for (std::size_t i = 0; i < ingest_inputs.size(); ++i)
          o.inputs.push_back({ingest_inputs[i], ingest_tags.empty() ? dstcan::Congestion::kUntagged
                                                                    : dstcan::congestion_from_string(ingest_tags[i])});
      }
      o.output = require_path(pick(o_ingest_out, ingest_out, cfg, "paths.tracks", std::string{}), "--out");
      const auto s = dstcan::pipeline::cmd_ingest(o);
      std::cout << "ingested " << s.tracks << " tracks, " << s.points << " points over " << s.frames
                << " frames -> " << o.output << '\n';
    };
  });

  // synth -------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Write synthetic multi-lane traffic as a trajectory CSV");
  Synth synth_opts;
  std::string synth_out;
  synth_opts.add(synth, "--vehicles");
  synth->add_option("--out", synth_out, "Output CSV")->required();
  synth->callback([&] {
    run = [&](const PipelineConfig& cfg) {
      const auto s = dstcan::pipeline::cmd_synth(synth_opts.resolve(cfg), synth_out);
      std::cout << "wrote " << s.tracks << " tracks, " << s.points << " points -> " << synth_out << '\n';
    };
  });

  // train-mnn ---------------------------------------------------------------
  auto* train_mnn = app.add_subcommand("train-mnn", "Train the memory neuron network trajectory predictor");
  dstcan::pipeline::TrainMnnOptions mnn_defaults;
  std::string mnn_tracks, mnn_out, mnn_optimizer = "adam";
  int mnn_epochs = mnn_defaults.epochs, mnn_window = mnn_defaults.window, mnn_hidden = mnn_defaults.hidden;
  int mnn_refine = mnn_defaults.refine_iterations;
  double mnn_lr = mnn_defaults.lr, mnn_holdout = mnn_defaults.holdout_fraction;
  std::size_t mnn_max_tracks = mnn_defaults.max_train_tracks;
  std::uint64_t mnn_seed = 0;
  auto* o_mnn_tracks = train_mnn->add_option("--tracks", mnn_tracks, "Track archive");
  auto* o_mnn_out = train_mnn->add_option("--out", mnn_out, "Output checkpoint");
  auto* o_mnn_epochs = train_mnn->add_option("--epochs", mnn_epochs, "Training epochs");
  auto* o_mnn_lr = train_mnn->add_option("--lr", mnn_lr, "Learning rate");
  auto* o_mnn_window = train_mnn->add_option("--window", mnn_window, "Displacements per training window");
  auto* o_mnn_hidden = train_mnn->add_option("--hidden", mnn_hidden, "Hidden neurons");
  auto* o_mnn_opt = train_mnn->add_option("--optimizer", mnn_optimizer, "adam or sgd");
  auto* o_mnn_refine = train_mnn->add_option("--refine", mnn_refine, "L-BFGS refinement iterations (0 = off)");
  auto* o_mnn_holdout = train_mnn->add_option("--holdout", mnn_holdout, "Held-out share of untagged tracks");
  auto* o_mnn_max = train_mnn->add_option("--max-tracks", mnn_max_tracks, "Bound on training tracks (0 = all)");
  auto* o_mnn_seed = train_mnn->add_option("--seed", mnn_seed, "Random seed");
  train_mnn->callback([&] {
    run = [&](const PipelineConfig& cfg) {
      dstcan::pipeline::TrainMnnOptions o;
      o.tracks = require_path(pick(o_mnn_tracks, mnn_tracks, cfg, "paths.tracks", std::string{}), "--tracks");
      o.output = require_path(pick(o_mnn_out, mnn_out, cfg, "paths.mnn", std::string{}), "--out");
      o.epochs = pick(o_mnn_epochs, mnn_epochs, cfg, "mnn.epochs", o.epochs);
      o.lr = pick(o_mnn_lr, mnn_lr, cfg, "mnn.lr", o.lr);
      o.window = pick(o_mnn_window, mnn_window, cfg, "mnn.window", o.window);
      o.hidden = pick(o_mnn_hidden, mnn_hidden, cfg, "mnn.hidden", o.hidden);
      o.refine_iterations = pick(o_mnn_refine, mnn_refine, cfg, "mnn.refine_iterations", o.refine_iterations);
      const auto opt = pick(o_mnn_opt, mnn_optimizer, cfg, "mnn.optimizer", std::string("adam"));
      if (opt == "adam") o.optimizer = dstcan::mnn::Optimizer::kAdam;
      else if (opt == "sgd") o.optimizer = dstcan::mnn::Optimizer::kSgd;
      else throw dstcan::UsageError("optimizer must be adam or sgd, got '" + opt + "'");
      o.holdout_fraction = pick(o_mnn_holdout, mnn_holdout, cfg, "mnn.holdout_fraction", o.holdout_fraction);
      o.max_train_tracks = pick(o_mnn_max, mnn_max_tracks, cfg, "mnn.max_train_tracks", o.max_train_tracks);
      o.seed = pick_seed(o_mnn_seed, mnn_seed, cfg, "mnn");
      const auto s = dstcan::pipeline::cmd_train_mnn(o);
      std::cout << "trained on " << s.train_tracks << " tracks; one-step RMSE train " << fmt(s.train_one_step_rmse)
                << " ft, held-out (" << s.test_tracks << " tracks) " << fmt(s.test_one_step_rmse) << " ft, "
                << o.rollout_horizon << "-frame rollout RMSE " << fmt(s.test_rollout_rmse) << " ft -> " << o.output
                << '\n';
    };
  });

  // build-grids -------------------------------------------------------------
  auto* build = app.add_subcommand("build-grids", "Build context grids and human / rule-based labels");
  dstcan::pipeline::BuildGridsOptions grid_defaults;
  std::string bg_tracks, bg_mnn, bg_grids, bg_labels;
  int bg_horizon = grid_defaults.horizon, bg_stride = grid_defaults.stride;
  double bg_keep = grid_defaults.keep_fraction, bg_test = grid_defaults.test_fraction;
  std::uint64_t bg_seed = 0;
  auto* o_bg_tracks = build->add_option("--tracks", bg_tracks, "Track archive");
  auto* o_bg_mnn = build->add_option("--mnn", bg_mnn, "MNN checkpoint");
  auto* o_bg_grids = build->add_option("--out-grids", bg_grids, "Output grid archive");
  auto* o_bg_labels = build->add_option("--out-labels", bg_labels, "Output label CSV");
  auto* o_bg_horizon = build->add_option("--horizon", bg_horizon, "Prediction horizon in frames: 10, 30 or 50");
  auto* o_bg_stride = build->add_option("--stride", bg_stride, "Frames between samples of one ego vehicle");
  auto* o_bg_keep = build->add_option("--keep-fraction", bg_keep, "Share of lane-keeping training samples kept");
  auto* o_bg_test = build->add_option("--test-fraction", bg_test, "Test share of untagged tracks");
  auto* o_bg_seed = build->add_option("--seed", bg_seed, "Random seed");
  build->callback([&] {
    run = [&](const PipelineConfig& cfg) {
      dstcan::pipeline::BuildGridsOptions o;
      o.tracks = require_path(pick(o_bg_tracks, bg_tracks, cfg, "paths.tracks", std::string{}), "--tracks");
      o.mnn_checkpoint = require_path(pick(o_bg_mnn, bg_mnn, cfg, "paths.mnn", std::string{}), "--mnn");
      o.grids_out = require_path(pick(o_bg_grids, bg_grids, cfg, "paths.grids", std::string{}), "--out-grids");
      o.labels_out = require_path(pick(o_bg_labels, bg_labels, cfg, "paths.labels", std::string{}), "--out-labels");
      o.horizon = pick(o_bg_horizon, bg_horizon, cfg, "grids.horizon", o.horizon);
      o.stride = pick(o_bg_stride, bg_stride, cfg, "grids.stride", o.stride);
      o.keep_fraction = pick(o_bg_keep, bg_keep, cfg, "grids.keep_fraction", o.keep_fraction);
      o.test_fraction = pick(o_bg_test, bg_test, cfg, "grids.test_fraction", o.test_fraction);
      o.seed = pick_seed(o_bg_seed, bg_seed, cfg, "grids");
      const auto s = dstcan::pipeline::cmd_build_grids(o);
      std::cout << "wrote " << s.written << " grids (" << s.dims.rows << "x" << s.dims.lanes << "x" << s.dims.depth
                << "), train " << s.train << ", test " << s.test << "; of " << s.candidates << " candidates skipped "
                << s.skipped_history << " for ego history, " << s.skipped_window << " for label windows, dropped "
                << s.dropped_balance << " by balancing -> " << o.grids_out << ", " << o.labels_out << '\n';
    };
  });

  // train-decision ----------------------------------------------------------
  auto* train_dec = app.add_subcommand("train-decision", "Train the convolutional decision network");
  dstcan::pipeline::TrainDecisionOptions dec_defaults;
  std::string td_grids, td_labels, td_out, td_log, td_source = "gt";
  bool td_regularize = true;
  int td_epochs = dec_defaults.epochs, td_batch = dec_defaults.batch;
  double td_lr = dec_defaults.rmsprop.lr, td_decay = dec_defaults.rmsprop.decay, td_eps = dec_defaults.rmsprop.eps;
  std::uint64_t td_seed = 0;
  auto* o_td_grids = train_dec->add_option("--grids", td_grids, "Grid archive");
  auto* o_td_labels = train_dec->add_option("--labels", td_labels, "Label CSV");
  auto* o_td_out = train_dec->add_option("--out", td_out, "Output checkpoint");
  auto* o_td_log = train_dec->add_option("--loss-log", td_log, "Per-epoch training loss CSV");
  auto* o_td_source = train_dec->add_option("--label-source", td_source, "Training targets: gt or human");
  auto* o_td_reg = train_dec->add_flag("--regularize,!--no-regularize", td_regularize,
                                       "Drop samples classified right after epoch 1");
  auto* o_td_epochs = train_dec->add_option("--epochs", td_epochs, "Training epochs");
  auto* o_td_batch = train_dec->add_option("--batch", td_batch, "Mini-batch size");
  auto* o_td_lr = train_dec->add_option("--lr", td_lr, "RMSProp learning rate");
  auto* o_td_decay = train_dec->add_option("--decay", td_decay, "RMSProp decay");
  auto* o_td_eps = train_dec->add_option("--eps", td_eps, "RMSProp epsilon");
  auto* o_td_seed = train_dec->add_option("--seed", td_seed, "Random seed");
  train_dec->callback([&] {
    run = [&](const PipelineConfig& cfg) {
      dstcan::pipeline::TrainDecisionOptions o;
      o.grids = require_path(pick(o_td_grids, td_grids, cfg, "paths.grids", std::string{}), "--grids");
      o.labels = require_path(pick(o_td_labels, td_labels, cfg, "paths.labels", std::string{}), "--labels");
      o.output = require_path(pick(o_td_out, td_out, cfg, "paths.decision", std::string{}), "--out");
      o.loss_log = pick(o_td_log, td_log, cfg, "paths.loss_log", std::string{});
      o.label_source = dstcan::pipeline::label_source_from_string(
          pick(o_td_source, td_source, cfg, "decision.label_source", std::string("gt")));
      o.regularize = pick(o_td_reg, td_regularize, cfg, "decision.regularize", o.regularize);
      o.epochs = pick(o_td_epochs, td_epochs, cfg, "decision.epochs", o.epochs);
      o.batch = pick(o_td_batch, td_batch, cfg, "decision.batch", o.batch);
      o.rmsprop.lr = pick(o_td_lr, td_lr, cfg, "decision.lr", o.rmsprop.lr);
      o.rmsprop.decay = pick(o_td_decay, td_decay, cfg, "decision.decay", o.rmsprop.decay);
      o.rmsprop.eps = pick(o_td_eps, td_eps, cfg, "decision.eps", o.rmsprop.eps);
      o.seed = pick_seed(o_td_seed, td_seed, cfg, "decision");
      o.on_epoch = [](int epoch, double loss) { std::cerr << "epoch " << epoch << " loss " << fmt(loss) << '\n'; };
      const auto s = dstcan::pipeline::cmd_train_decision(o);
      if (s.empty_after_filter)
        std::cerr << "warning: every training sample was classified right after epoch 1; "
                     "keeping the epoch-1 parameters\n";
      std::cout << "trained on " << s.samples << " samples (" << s.removed << " removed after epoch 1, "
                << s.retained << " retained); final loss " << fmt(s.epoch_loss.back()) << " -> " << o.output << '\n';
    };
  });

  // evaluate ----------------------------------------------------------------
  auto* evaluate = app.add_subcommand("evaluate", "Score a decision network on consensus and conflict cases");
  std::string ev_grids, ev_labels, ev_ckpt, ev_out, ev_csv, ev_split = "test", ev_ref = "gt", ev_source = "gt",
                                                              ev_log;
  auto* o_ev_grids = evaluate->add_option("--grids", ev_grids, "Grid archive");
  auto* o_ev_labels = evaluate->add_option("--labels", ev_labels, "Label CSV");
  auto* o_ev_ckpt = evaluate->add_option("--checkpoint", ev_ckpt, "Decision network checkpoint");
  auto* o_ev_out = evaluate->add_option("--out", ev_out, "Output report (JSON)");
  auto* o_ev_csv = evaluate->add_option("--matrices", ev_csv, "Also write both confusion matrices as CSV");
  auto* o_ev_split = evaluate->add_option("--split", ev_split, "Samples to score: train, test or all");
  auto* o_ev_ref = evaluate->add_option("--reference", ev_ref, "Accuracy reference: gt or human");
  auto* o_ev_source = evaluate->add_option("--label-source", ev_source, "Label source the network was trained on");
  auto* o_ev_log = evaluate->add_option("--loss-log", ev_log, "Training loss log to reference in the report");
  evaluate->callback([&] {
    run = [&](const PipelineConfig& cfg) {
      dstcan::pipeline::EvaluateOptions o;
      o.grids = require_path(pick(o_ev_grids, ev_grids, cfg, "paths.grids", std::string{}), "--grids");
      o.labels = require_path(pick(o_ev_labels, ev_labels, cfg, "paths.labels", std::string{}), "--labels");
      o.checkpoint = require_path(pick(o_ev_ckpt, ev_ckpt, cfg, "paths.decision", std::string{}), "--checkpoint");
      o.report_out = require_path(pick(o_ev_out, ev_out, cfg, "paths.report", std::string{}), "--out");
      o.matrices_csv = pick(o_ev_csv, ev_csv, cfg, "paths.matrices", std::string{});
      o.split = pick(o_ev_split, ev_split, cfg, "evaluate.split", o.split);
      o.reference = dstcan::eval::reference_from_string(pick(o_ev_ref, ev_ref, cfg, "evaluate.reference",
                                                             std::string("gt")));
      o.label_source = dstcan::pipeline::label_source_from_string(
          pick(o_ev_source, ev_source, cfg, "decision.label_source", std::string("gt")));
      o.loss_log = pick(o_ev_log, ev_log, cfg, "paths.loss_log", std::string{});
      const auto r = dstcan::pipeline::cmd_evaluate(o);
      auto acc = [](const dstcan::eval::SubsetReport& s) {
        if (!s.accuracy) return std::string("n/a");
        return fmt(s.accuracy->lateral) + "% / " + fmt(s.accuracy->longitudinal) + "%";
      };
      std::cout << "samples " << r.overall.count << ": overall lat/lon " << acc(r.overall) << ", consensus ("
                << r.consensus.count << ") " << acc(r.consensus) << ", conflict (" << r.conflict.count << ") "
                << acc(r.conflict) << " -> " << o.report_out << '\n';
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    const auto cfg = config_path.empty() ? PipelineConfig{} : PipelineConfig::load(config_path);
    run(cfg);
  } catch (const dstcan::UsageError& e) {
    std::cerr << "dstcan: error: " << e.what() << '\n';
    return kUsage;
  } catch (const dstcan::DataError& e) {
    std::cerr << "dstcan: data error: " << e.what() << '\n';
    return kData;
  } catch (const dstcan::NumericError& e) {
    std::cerr << "dstcan: numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "dstcan: error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
