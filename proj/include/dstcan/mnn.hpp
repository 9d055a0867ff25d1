#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dstcan/ingest.hpp"
#include "dstcan/rng.hpp"

// Memory neuron network look-ahead predictor.
//
// Every network neuron (input, hidden, output) owns a memory neuron whose
// output is a leaky trace of that neuron's previous output:
//
//   v(t) = alpha * psi(t-1) + (1 - alpha) * v(t-1)
//
// Hidden neurons are tanh over the current inputs and the input memories; the
// two output neurons are linear over hidden outputs, hidden memories and their
// own memory scaled by beta. There are no offset terms.
namespace dstcan::mnn {

inline constexpr int kIo = 2;
inline constexpr int kDefaultHidden = 6;

// Per-frame displacement in feet.
struct Delta {
  double dx = 0.0;
  double dy = 0.0;
  friend bool operator==(const Delta&, const Delta&) = default;
};

struct Position {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Position&, const Position&) = default;
};

// Matrices are row-major: w_in[k * H + j] is input k to hidden j, and
// w_hid[k * 2 + j] is hidden k to output j.
struct MnnParams {
  int hidden = kDefaultHidden;
  std::vector<double> w_in;       // 2 x H
  std::vector<double> f_in;       // 2 x H, input memories to hidden
  std::array<double, kIo> alpha_in{};
  std::vector<double> w_hid;      // H x 2
  std::vector<double> f_hid;      // H x 2, hidden memories to outputs
  std::vector<double> alpha_hid;  // H
  std::array<double, kIo> alpha_out{};
  std::array<double, kIo> beta_out{};

  static MnnParams zeros(int hidden = kDefaultHidden);
  // w, f and beta uniform in [-0.5, 0.5]; every alpha 0.5.
  static MnnParams random(std::uint64_t seed, int hidden = kDefaultHidden);

  std::size_t size() const { return static_cast<std::size_t>(4 * kIo * hidden + hidden + 3 * kIo); }
  // Field order: w_in, f_in, alpha_in, w_hid, f_hid, alpha_hid, alpha_out, beta_out.
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
  void clamp_alphas();

  friend bool operator==(const MnnParams&, const MnnParams&) = default;
};

// Gradients share the parameter layout.
using MnnGradients = MnnParams;

struct MnnState {
  std::array<double, kIo> v_in{};
  std::vector<double> v_hid;
  std::array<double, kIo> v_out{};
  // Network-neuron outputs of the previous step.
  std::array<double, kIo> psi_prev_in{};
  std::vector<double> psi_prev_hid;
  std::array<double, kIo> psi_prev_out{};

  friend bool operator==(const MnnState&, const MnnState&) = default;
};

MnnState mnn_reset(const MnnParams& params);

// Advances the memories from the previous outputs, then evaluates the network.
// Throws NumericError on non-finite input.
Delta mnn_step(const MnnParams& params, MnnState& state, const Delta& input);
std::pair<Delta, MnnState> mnn_forward_step(const MnnParams& params, const MnnState& state, const Delta& input);

// Mean over vehicles of each vehicle's RMSE over the horizon.
double mnn_loss(std::span<const std::vector<Position>> predicted, std::span<const std::vector<Position>> truth);

// Teacher-forced sequence: inputs[t] is the true displacement before targets[t].
struct Sequence {
  std::vector<Delta> inputs;
  std::vector<Delta> targets;
};

// Builds the teacher-forced pairs from consecutive displacements.
Sequence make_sequence(std::span<const Delta> deltas);
std::vector<Delta> displacements(std::span<const TrackPoint> points);

struct GradientResult {
  MnnGradients grad;
  double sse = 0.0;  // sum over steps of the squared output error
};

// Exact BPTT gradients of the summed squared error, run from a reset state.
GradientResult mnn_gradients(const MnnParams& params, std::span<const Delta> inputs, std::span<const Delta> targets);
// Sum over independent sequences, each from a reset state.
GradientResult mnn_gradients(const MnnParams& params, std::span<const Sequence> sequences);
double mnn_sse(const MnnParams& params, std::span<const Sequence> sequences);

enum class Optimizer {
  kAdam,  // full-batch, cosine-decayed learning rate
  kSgd,   // per-window gradient descent in seeded shuffled order
};

struct TrainConfig {
  int epochs = 5000;
  double lr = 3e-2;
  Optimizer optimizer = Optimizer::kAdam;
  std::uint64_t seed = 0;
  // Displacements per training window; each window starts from reset memory.
  int window = 40;
  // Gradient norm cap (per window for SGD, per epoch for Adam); 0 disables.
  double clip_norm = 10.0;
  // L-BFGS iterations on the full-batch error after the first-order epochs,
  // with alphas parameterised as logistic values. Skipped when epochs is 0.
  int refine_iterations = 2000;
};

// Cuts tracks into reset-started teacher-forced windows.
std::vector<Sequence> training_sequences(std::span<const Track> tracks, int window);

struct TrainResult {
  MnnParams params;
  double initial_sse = 0.0;
  double final_sse = 0.0;
  std::vector<double> epoch_sse;  // training SSE after each epoch
};

// Minimises the mean squared one-step error with alphas clamped to [0, 1]
// after every update, then refines. Returns the best parameters
// seen, so final_sse <= initial_sse. Throws DataError without usable tracks.
TrainResult mnn_train(const MnnParams& init, std::span<const Track> tracks, const TrainConfig& config);

enum class Warmup {
  kTeacherForced,  // observed displacements drive the memories over the history
  kFreeRunning,    // only the first displacement is observed, outputs feed back
};

// Warms up on the history, then feeds predicted displacements back for m steps.
// Positions are running sums from the last observed point.
std::vector<Position> mnn_predict_lookahead(const MnnParams& params, std::span<const Position> history, int m,
                                            Warmup warmup = Warmup::kTeacherForced);
std::vector<Position> mnn_predict_lookahead(const MnnParams& params, std::span<const TrackPoint> history, int m,
                                            Warmup warmup = Warmup::kTeacherForced);

// One-step and rollout error summaries over tracks (mean over vehicles of per-vehicle RMSE).
double one_step_rmse(const MnnParams& params, std::span<const Track> tracks);
double rollout_rmse(const MnnParams& params, std::span<const Track> tracks, int history, int horizon);

inline constexpr int kCheckpointVersion = 1;
nlohmann::json to_json(const MnnParams& params);
MnnParams mnn_from_json(const nlohmann::json& doc);
void save_checkpoint(const MnnParams& params, const std::string& path);
MnnParams load_checkpoint(const std::string& path);

}  // namespace dstcan::mnn
