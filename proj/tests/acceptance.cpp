// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fail. Run from a scratch directory; CLI runs write there.
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dstcan/decision_net.hpp"
#include "dstcan/eval.hpp"
#include "dstcan/grid.hpp"
#include "dstcan/gtrules.hpp"
#include "dstcan/ingest.hpp"
#include "dstcan/mnn.hpp"
#include "dstcan/pipeline.hpp"

using namespace dstcan;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr int kMnnGradInstances = 20;
constexpr int kMnnGradMaxLength = 30;
constexpr double kMnnFdStep = 1e-6;
constexpr double kMnnGradTol = 1e-5;
constexpr double kMnnGradBudgetS = 10.0;
constexpr double kDriftPerStepFt = 0.1;
constexpr int kRolloutSteps = 30;
constexpr double kMnnLearnBudgetS = 60.0;
constexpr double kDecayTol = 1e-9;
constexpr int kPomScenes = 1000;
constexpr double kMassTol = 1e-9;
constexpr double kGtBudgetS = 30.0;
constexpr double kNetFdStep = 1e-5;
constexpr double kNetGradTol = 1e-4;
constexpr int kOverfitSamples = 64;
constexpr int kOverfitEpochs = 200;
constexpr double kOverfitBudgetS = 300.0;
constexpr double kE2eMinAccuracy = 95.0;
constexpr double kE2eBudgetS = 900.0;
// Relative errors divide by max(|analytic|, |numeric|, kGradFloor).
constexpr double kGradFloor = 1e-6;

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a = 0, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double rel_err(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), kGradFloor}); }

// ---------------------------------------------------------------------------

Outcome mnn_gradient_oracle() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst = 0.0;
  for (int inst = 0; inst < kMnnGradInstances; ++inst) {
    auto p = mnn::MnnParams::random(1000 + static_cast<std::uint64_t>(inst));
    for (auto& a : p.alpha_in) a = rng.uniform(0.05, 0.95);
    for (auto& a : p.alpha_hid) a = rng.uniform(0.05, 0.95);
    for (auto& a : p.alpha_out) a = rng.uniform(0.05, 0.95);
    const int n = 1 + static_cast<int>(rng.below(kMnnGradMaxLength));
    std::vector<mnn::Delta> in, tg;
    for (int t = 0; t < n; ++t) {
      in.push_back({rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
      tg.push_back({rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
    }
    const auto g = mnn::mnn_gradients(p, in, tg).grad.flatten();
    auto flat = p.flatten();
    auto q = p;
    for (std::size_t i = 0; i < flat.size(); ++i) {
      const double keep = flat[i];
      flat[i] = keep + kMnnFdStep;
      q.assign(flat);
      const double up = mnn::mnn_gradients(q, in, tg).sse;
      flat[i] = keep - kMnnFdStep;
      q.assign(flat);
      const double down = mnn::mnn_gradients(q, in, tg).sse;
      flat[i] = keep;
      worst = std::max(worst, rel_err(g[i], (up - down) / (2 * kMnnFdStep)));
    }
  }
  const double secs = seconds_since(t0);
  return {worst < kMnnGradTol && secs < kMnnGradBudgetS,
          fmt("%.0f instances, max rel err %.3g (< %.0e), %.2f s", kMnnGradInstances, worst, kMnnGradTol, secs)};
}

Track constant_velocity(std::int32_t id, double dx, double dy, int n, Rng& rng) {
  Track t{id, Congestion::kUntagged, {}};
  const double x0 = rng.uniform(0.0, 36.0), y0 = rng.uniform(0.0, 500.0);
  for (int i = 0; i < n; ++i) t.points.push_back({id, i + 1, 2, x0 + dx * i, y0 + dy * i});
  return t;
}

Outcome mnn_learning() {
  const auto t0 = Clock::now();
  Rng rng(7);
  // Held-out speeds lie inside the training range.
  std::vector<Track> train, test;
  for (int i = 0; i < 32; ++i) train.push_back(constant_velocity(i + 1, rng.uniform(-0.15, 0.15), rng.uniform(3.0, 7.0), 100, rng));
  for (int i = 0; i < 10; ++i)
    test.push_back(constant_velocity(100 + i, rng.uniform(-0.1, 0.1), rng.uniform(3.5, 6.5), 100, rng));
  mnn::TrainConfig config;
  config.seed = 11;
  const auto result = mnn::mnn_train(mnn::MnnParams::random(11), train, config);
  const double train_secs = seconds_since(t0);

  double worst = 0.0;  // max over vehicles and steps of error_k / k
  double worst_final = 0.0;
  for (const auto& t : test) {
    const std::span<const TrackPoint> history(t.points.data(), 31);
    const auto pred = mnn::mnn_predict_lookahead(result.params, history, kRolloutSteps);
    for (int k = 1; k <= kRolloutSteps; ++k) {
      const auto& truth = t.points[static_cast<std::size_t>(30 + k)];
      const auto& p = pred[static_cast<std::size_t>(k - 1)];
      const double err = std::hypot(p.x - truth.x_lat, p.y - truth.y_lon);
      worst = std::max(worst, err / k);
      if (k == kRolloutSteps) worst_final = std::max(worst_final, err);
    }
  }
  return {worst < kDriftPerStepFt && train_secs < kMnnLearnBudgetS,
          fmt("worst drift %.4f ft/step (< %.1f), worst error at step 30 %.3f ft, training %.1f s", worst,
              kDriftPerStepFt, worst_final, train_secs) +
              fmt(" (< %.0f s)", kMnnLearnBudgetS)};
}

Outcome decay_law() {
  const double e0 = std::abs(grid::certainty(0) - (0.47 + std::sqrt(0.236)));
  const double e30 = std::abs(grid::certainty(30) - (0.47 + std::sqrt(0.116)));
  const double e50 = std::abs(grid::certainty(50) - (0.47 + std::sqrt(0.036)));
  const double worst = std::max({e0, e30, e50});
  return {worst <= kDecayTol, fmt("P(0)=%.9f P(30)=%.9f P(50)=%.9f, max deviation %.2g", grid::certainty(0),
                                  grid::certainty(30), grid::certainty(50), worst)};
}

// Near-exact displacement pass-through predictor.
mnn::MnnParams pass_through() {
  auto p = mnn::MnnParams::zeros();
  const double eps = 1e-5;
  p.w_in[0 * p.hidden + 0] = eps;
  p.w_in[1 * p.hidden + 1] = eps;
  p.w_hid[0 * mnn::kIo + 0] = 1.0 / eps;
  p.w_hid[1 * mnn::kIo + 1] = 1.0 / eps;
  return p;
}

Outcome pom_mass() {
  Rng rng(99);
  const auto config = grid::GridConfig::for_horizon(30);
  const auto predictor = pass_through();
  double worst_mass = 0.0;
  bool binary = true;
  int occupied_past_wrong = 0;
  for (int scene = 0; scene < kPomScenes; ++scene) {
    // Future stamps are placed relative to the ego's current position, so
    // the neighbour stays within 70 ft of it over the 30 predicted frames.
    const double ego_v = rng.uniform(2.0, 7.0);
    const double v = rng.uniform(0.5, 4.5);
    const double rel0 = rng.uniform(-70.0, 70.0 - 30 * v);
    const double jitter = rng.uniform(-3.0, 3.0);
    const double rel_v = v - ego_v;
    Track ego{1, Congestion::kUntagged, {}}, other{2, Congestion::kUntagged, {}};
    for (int f = 1; f <= 40; ++f) {
      ego.points.push_back({1, f, 2, 18.0, ego_v * (f - 30)});
      other.points.push_back({2, f, 2, 18.0 + jitter, rel0 + v * (f - 30)});
    }
    const TrackStore store(std::vector<Track>{ego, other});
    const auto g = grid::build_context_grid(store, 1, 30, predictor, config);
    for (int t = 0; t < config.depth(); ++t) {
      const auto slice = g.slice(t);
      if (t < config.n_past) {
        int ones = 0;
        for (double v : slice.cells) {
          if (v != 0.0 && v != 1.0) binary = false;
          ones += v == 1.0;
        }
        const double rel = rel0 + rel_v * (t - 29);
        if (ones != (std::abs(rel) <= kSensingRangeFt ? 1 : 0)) ++occupied_past_wrong;
      } else {
        worst_mass = std::max(worst_mass, std::abs(g.slice_sum(t) - 1.0));
      }
    }
  }
  return {worst_mass <= kMassTol && binary && occupied_past_wrong == 0,
          fmt("%.0f scenes, max |future slice mass - 1| %.2g, past occupancy mismatches %.0f", kPomScenes, worst_mass,
              occupied_past_wrong) +
              (binary ? ", past slices binary" : ", non-binary past slice")};
}

// Independent transcription of the decision rules as nested tests against sqrt(5).
ManeuverLabel reference_rules(int D_s, int D_pre, double D_LB, double D_LF, double D_RB, double D_RF, int I_r, int I_l) {
  const double r5 = std::sqrt(5.0);
  const ManeuverLabel same_cruise{Lateral::kSame, Longitudinal::kCruise};
  const ManeuverLabel left_cruise{Lateral::kLeft, Longitudinal::kCruise};
  const ManeuverLabel right_cruise{Lateral::kRight, Longitudinal::kCruise};
  const ManeuverLabel same_brake{Lateral::kSame, Longitudinal::kBrake};
  const int D_diff = D_s - D_pre;
  if (D_s > 2) {
    if (D_diff >= 0) {
      return same_cruise;
    } else {
      if (D_LB > r5 && D_LF > r5 && (D_RB <= r5 || D_RF <= r5 || I_r == 1) && I_l == 0) {
        return left_cruise;
      } else if (D_RB > r5 && D_RF > r5 && (D_LB <= r5 || D_LF <= r5 || I_l == 1) && I_r == 0) {
        return right_cruise;
      } else if ((D_RB > r5 && D_RF > r5) && (D_LB > r5 && D_LF > r5) && I_r == 0 && I_l == 0) {
        return right_cruise;
      } else {
        return same_brake;
      }
    }
  } else {
    if (D_LB > r5 && D_LF > r5 && (D_RB <= r5 || D_RF <= r5 || I_r == 1) && I_l == 0) {
      return left_cruise;
    } else if (D_RB > r5 && D_RF > r5 && (D_LB <= r5 || D_LF <= r5 || I_l == 1) && I_r == 0) {
      return right_cruise;
    } else if ((D_RB > r5 && D_RF > r5) && (D_LB > r5 && D_LF > r5) && I_r == 0 && I_l == 0) {
      return right_cruise;
    } else {
      return same_brake;
    }
  }
}

Outcome gt_equivalence() {
  const auto t0 = Clock::now();
  const double inf = std::numeric_limits<double>::infinity();
  const std::vector<double> dists{1.0, std::sqrt(2.0), 2.0, std::sqrt(5.0), std::sqrt(8.0), 3.0, inf};
  const double r5 = std::sqrt(5.0);
  long total = 0, disagree = 0, invalid = 0, both_lanes = 0, unsafe = 0;
  for (int ds = 0; ds <= 6; ++ds)
    for (int dp = 0; dp <= 6; ++dp)
      for (double lb : dists)
        for (double lf : dists)
          for (double rb : dists)
            for (double rf : dists)
              for (int ir = 0; ir <= 1; ++ir)
                for (int il = 0; il <= 1; ++il) {
                  ++total;
                  gtrules::GtFeatures f;
                  f.d_s = ds;
                  f.d_pre = dp;
                  f.d_lb = lb;
                  f.d_lf = lf;
                  f.d_rb = rb;
                  f.d_rf = rf;
                  f.i_r = ir;
                  f.i_l = il;
                  const auto got = gtrules::gt_decision(f);
                  if (!(got == reference_rules(ds, dp, lb, lf, rb, rf, ir, il))) ++disagree;
                  const bool printed = (got.longitudinal == Longitudinal::kCruise) ||
                                       (got.lateral == Lateral::kSame && got.longitudinal == Longitudinal::kBrake);
                  if (!printed) ++invalid;
                  const bool left_cond = lb > r5 && lf > r5 && (rb <= r5 || rf <= r5 || ir == 1) && il == 0;
                  const bool right_cond = rb > r5 && rf > r5 && (lb <= r5 || lf <= r5 || il == 1) && ir == 0;
                  if (left_cond && right_cond) ++both_lanes;
                  if (got.lateral == Lateral::kLeft && !(lb > r5 && lf > r5 && il == 0)) ++unsafe;
                  if (got.lateral == Lateral::kRight && !(rb > r5 && rf > r5 && ir == 0)) ++unsafe;
                }
  const double secs = seconds_since(t0);
  return {disagree == 0 && invalid == 0 && both_lanes == 0 && unsafe == 0 && secs < kGtBudgetS,
          fmt("%.0f inputs, %.0f disagreements, %.0f outside SC, LC, RC and SB, %.0f with both lane tests true",
              static_cast<double>(total), static_cast<double>(disagree), static_cast<double>(invalid),
              static_cast<double>(both_lanes)) +
              fmt(", %.0f unsafe lane changes, %.2f s", static_cast<double>(unsafe), secs)};
}

Outcome net_gradient_oracle() {
  const auto arch = net::Architecture::for_grid(13, 3, 8);
  auto p = net::DecisionNetParams::random(arch, 5);
  Rng rng(31);
  // Dense inputs: sparse grids put exact pooling ties and activation kinks
  // within a step of the evaluation point.
  std::vector<std::vector<double>> grids(2, std::vector<double>(13 * 3 * 8));
  for (auto& g : grids)
    for (auto& v : g) v = rng.uniform(0.05, 1.0);
  const std::vector<net::Example> batch{{grids[0], {Lateral::kLeft, Longitudinal::kBrake}},
                                        {grids[1], {Lateral::kRight, Longitudinal::kCruise}}};
  const auto analytic = net::net_gradients(p, batch).grad;
  // Every conv, bias and head coordinate plus a seeded sample of the dense layer.
  const net::Layout L(arch);
  std::vector<std::size_t> coords;
  for (std::size_t i = 0; i < L.fc_w; ++i) coords.push_back(i);
  for (std::size_t i = L.fc_b; i < L.total; ++i) coords.push_back(i);
  for (int k = 0; k < 3000; ++k) coords.push_back(L.fc_w + rng.below(L.fc_b - L.fc_w));
  double worst = 0.0;
  for (auto i : coords) {
    const double keep = p.values[i];
    p.values[i] = keep + kNetFdStep;
    const double up = net::net_gradients(p, batch).loss;
    p.values[i] = keep - kNetFdStep;
    const double down = net::net_gradients(p, batch).loss;
    p.values[i] = keep;
    worst = std::max(worst, rel_err(analytic[i], (up - down) / (2 * kNetFdStep)));
  }
  return {worst < kNetGradTol,
          fmt("%.0f of %.0f coordinates, max rel err %.3g (< %.0e)", static_cast<double>(coords.size()),
              static_cast<double>(L.total), worst, kNetGradTol)};
}

// Lateral class sets a block ahead in lane 0, 1 or 2; braking sets a block
// behind the ego in the centre lane. Sparse noise sits in the rear rows.
net::Dataset separable_set(Rng& rng, const net::Architecture& a) {
  net::Dataset d;
  d.cells = static_cast<std::size_t>(a.rows * a.lanes * a.depth);
  for (int i = 0; i < kOverfitSamples; ++i) {
    const ManeuverLabel label{static_cast<Lateral>(i % 3), static_cast<Longitudinal>((i / 3) % 2)};
    grid::ContextGrid g(a.rows, a.lanes, a.depth);
    for (int r = 0; r < 3; ++r)
      for (int l = 0; l < 3; ++l)
        for (int t = 0; t < a.depth; ++t)
          if (rng.uniform() < 0.1) g.at(r, l, t) = 1.0;
    for (int r = 9; r < 13; ++r)
      for (int t = 0; t < a.depth; ++t) g.at(r, static_cast<int>(label.lateral), t) = 1.0;
    if (label.longitudinal == Longitudinal::kBrake)
      for (int r = 4; r < 6; ++r)
        for (int t = 0; t < a.depth; ++t) g.at(r, 1, t) = 1.0;
    std::vector<double> v(g.values().begin(), g.values().end());
    d.add(static_cast<std::uint64_t>(i), v, label);
  }
  return d;
}

Outcome overfit() {
  const auto t0 = Clock::now();
  const auto arch = net::Architecture::for_grid(13, 3, 60);
  Rng rng(3);
  const auto data = separable_set(rng, arch);
  net::TrainConfig config;
  config.epochs = kOverfitEpochs;
  config.batch = kOverfitSamples;
  config.seed = 4;
  config.regularize = false;
  const auto result = net::train_regularized(net::DecisionNetParams::random(arch, 4), data, config);
  const double acc = 100.0 * net::accuracy(result.params, data);
  const double secs = seconds_since(t0);
  return {acc == 100.0 && secs < kOverfitBudgetS,
          fmt("%.0f separable grids, training accuracy %.2f%% after %.0f epochs, %.1f s", kOverfitSamples, acc,
              static_cast<double>(result.epoch_loss.size()), secs)};
}

// ---------------------------------------------------------------------------
// Command-line runs.

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool cli(const fs::path& dir, const std::string& args) {
  const auto log = dir / "cli.log";
  const std::string cmd =
      "cd '" + dir.string() + "' && " + std::string(DSTCAN_CLI_PATH) + " " + args + " >> cli.log 2>&1";
  const int status = std::system(cmd.c_str());
  if (WIFEXITED(status) && WEXITSTATUS(status) == 0) return true;
  std::cerr << "command failed: dstcan " << args << "\n" << slurp(log);
  return false;
}

double final_loss(const fs::path& log) {
  std::ifstream in(log);
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  return std::stod(last.substr(last.find(',') + 1));
}

struct PipelineRun {
  bool ok = false;
  fs::path dir;
  double seconds = 0.0;
};

// synth -> MNN -> grids (T = 30) -> regularized GT training -> evaluation.
PipelineRun full_pipeline(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto t0 = Clock::now();
  const auto f = [](const char* name) { return std::string(name); };
  PipelineRun run{false, dir, 0.0};
  run.ok = cli(dir, "ingest --synth 30 --frames 600 --seed 11 --out " + f("tracks.bin")) &&
           cli(dir, "train-mnn --tracks " + f("tracks.bin") + " --seed 12 --out " + f("mnn.json")) &&
           cli(dir, "build-grids --tracks " + f("tracks.bin") + " --mnn " + f("mnn.json") +
                        " --horizon 30 --seed 13 --out-grids " + f("grids.bin") + " --out-labels " + f("labels.csv")) &&
           cli(dir, "train-decision --grids " + f("grids.bin") + " --labels " + f("labels.csv") +
                        " --label-source gt --seed 14 --out " + f("net.json") + " --loss-log " + f("loss.csv")) &&
           cli(dir, "evaluate --grids " + f("grids.bin") + " --labels " + f("labels.csv") + " --checkpoint " +
                        f("net.json") + " --out " + f("report.json") + " --matrices " + f("matrices.csv"));
  run.seconds = seconds_since(t0);
  return run;
}

Outcome end_to_end(const PipelineRun& run) {
  if (!run.ok) return {false, "pipeline failed"};
  const auto r = eval::parse_report_file((run.dir / "report.json").string());
  if (!r.overall.accuracy) return {false, "no test samples"};
  const auto acc = *r.overall.accuracy;
  return {acc.lateral >= kE2eMinAccuracy && acc.longitudinal >= kE2eMinAccuracy && run.seconds < kE2eBudgetS,
          fmt("held-out %.0f samples vs GT: lateral %.2f%%, longitudinal %.2f%% (>= 95), %.0f s",
              static_cast<double>(r.overall.count), acc.lateral, acc.longitudinal, run.seconds)};
}

Outcome regularization_ordering(const PipelineRun& run) {
  if (!run.ok) return {false, "pipeline failed"};
  const auto f = [](const char* name) { return std::string(name); };
  if (!cli(run.dir, "train-decision --grids " + f("grids.bin") + " --labels " + f("labels.csv") +
                        " --label-source gt --no-regularize --seed 14 --out " + f("net_plain.json") +
                        " --loss-log " + f("loss_plain.csv")))
    return {false, "unregularized training failed"};
  const double reg = final_loss(run.dir / "loss.csv");
  const double plain = final_loss(run.dir / "loss_plain.csv");
  return {reg < plain, fmt("final-epoch training loss: regularized %.4f, unregularized %.4f", reg, plain)};
}

Outcome determinism(const PipelineRun& a, const PipelineRun& b) {
  if (!a.ok || !b.ok) return {false, "pipeline failed"};
  const std::vector<std::string> files{"tracks.bin", "mnn.json", "grids.bin", "labels.csv",
                                       "net.json",   "loss.csv", "report.json"};
  std::string differing;
  for (const auto& name : files)
    if (slurp(a.dir / name) != slurp(b.dir / name)) differing += " " + name;
  return {differing.empty(), differing.empty() ? "two runs: tracks, checkpoints, grids, labels, loss log and report "
                                                 "bitwise identical"
                                               : "two runs differ in:" + differing};
}

// Writes tracks with the full NGSIM column set.
void write_ngsim(const TrackStore& store, const fs::path& path) {
  std::ofstream out(path);
  out << "Vehicle_ID,Frame_ID,Total_Frames,Global_Time,Local_X,Local_Y,Global_X,Global_Y,v_Length,v_Width,v_Class,"
         "v_Vel,v_Acc,Lane_ID,Preceding,Following,Space_Headway,Time_Headway\n";
  out.precision(10);
  for (const auto& [id, t] : store.tracks())
    for (const auto& p : t.points)
      out << id << ',' << p.frame_id << ',' << t.points.size() << ',' << 1118846979000LL + 100LL * p.frame_id << ','
          << p.x_lat << ',' << p.y_lon << ",6451203.0,1873252.0,14.5,4.9,2,40.0,0.0," << p.lane_id
          << ",0,0,0.0,0.0\n";
}

Outcome ngsim_path(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto f = [](const char* name) { return std::string(name); };
  const char* tags[] = {"low", "medium", "high"};
  std::string inputs;
  for (int k = 0; k < 3; ++k) {
    ScenarioConfig c;
    c.n_vehicles = 15;
    c.n_frames = 300;
    const auto name = std::string("i80_") + tags[k] + ".csv";
    write_ngsim(synth_scenarios(c, 50 + static_cast<std::uint64_t>(k)), dir / name);
    inputs += " --input " + name + " --congestion " + tags[k];
  }
  const bool ok =
      cli(dir, "ingest" + inputs + " --out " + f("tracks.bin")) &&
      cli(dir, "train-mnn --tracks " + f("tracks.bin") + " --epochs 300 --seed 1 --out " + f("mnn.json")) &&
      cli(dir, "build-grids --tracks " + f("tracks.bin") + " --mnn " + f("mnn.json") + " --horizon 30 --seed 2" +
                   " --out-grids " + f("grids.bin") + " --out-labels " + f("labels.csv")) &&
      cli(dir, "train-decision --grids " + f("grids.bin") + " --labels " + f("labels.csv") +
                   " --epochs 2 --seed 3 --out " + f("net.json")) &&
      cli(dir, "evaluate --grids " + f("grids.bin") + " --labels " + f("labels.csv") + " --checkpoint " +
                   f("net.json") + " --out " + f("report.json") + " --matrices " + f("matrices.csv"));
  if (!ok) return {false, "pipeline failed"};
  const auto arc = grid::read_grid_archive((dir / "grids.bin").string());
  const auto labels = grid::read_labels((dir / "labels.csv").string());
  std::size_t test = 0;
  bool medium_only_test = true;
  for (const auto& l : labels) {
    const bool is_medium = grid::sample_ego(l.sample_id) / pipeline::kIdStride == 1;
    if (l.split == grid::Split::kTest) ++test;
    if (is_medium != (l.split == grid::Split::kTest)) medium_only_test = false;
  }
  const auto doc = nlohmann::json::parse(slurp(dir / "report.json"));
  bool shaped = true;
  for (const char* subset : {"consensus", "conflict"}) {
    const auto& m = doc.at(subset).at("matrix");
    shaped = shaped && m.size() == 5;
    for (const auto& row : m) shaped = shaped && row.size() == 5;
  }
  const auto csv = slurp(dir / "matrices.csv");
  shaped = shaped && csv.find("consensus,Same lane,Take left,Take right,Cruise,Brake") != std::string::npos &&
           csv.find("conflict,Same lane,Take left,Take right,Cruise,Brake") != std::string::npos;
  const bool dims = arc.dims == grid::GridDims{13, 3, 60};
  return {dims && shaped && medium_only_test && test > 0,
          fmt("archive %.0fx%.0fx%.0f with %.0f samples", arc.dims.rows, arc.dims.lanes, arc.dims.depth,
              static_cast<double>(arc.size())) +
              fmt(", %.0f medium-congestion test samples", static_cast<double>(test)) +
              (shaped ? ", consensus and conflict 5x5 matrices present" : ", matrices malformed")};
}

}  // namespace

int main() {
  int failures = 0;
  const auto report = [&](const char* name, const Outcome& o) {
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    if (!o.pass) ++failures;
  };
  report("mnn-gradient-oracle", mnn_gradient_oracle());
  report("mnn-learning", mnn_learning());
  report("decay-law", decay_law());
  report("pom-mass-conservation", pom_mass());
  report("gt-oracle-equivalence", gt_equivalence());
  report("net-gradient-oracle", net_gradient_oracle());
  report("overfit", overfit());

  const auto work = fs::current_path() / "acceptance_runs";
  const auto first = full_pipeline(work / "run_a");
  report("end-to-end", end_to_end(first));
  report("regularization-ordering", regularization_ordering(first));
  const auto second = full_pipeline(work / "run_b");
  report("determinism", determinism(first, second));
  report("ngsim-format", ngsim_path(work / "ngsim"));

  std::cout << (failures == 0 ? "all acceptance criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
