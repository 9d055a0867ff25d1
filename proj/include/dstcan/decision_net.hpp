#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dstcan/grid.hpp"
#include "dstcan/maneuver.hpp"

// Convolutional manoeuvre classifier over context grids.
//
//   grid (1 x rows x 3 x T)
//   -> conv 3x3x5, C1 channels, padded in rows/time -> leaky ReLU   (C1 x rows x 1 x T)
//   -> conv 3x1x5, C2 channels, padded in rows/time -> leaky ReLU   (C2 x rows x 1 x T)
//   -> max-pool 2 over time -> flatten -> dense FC -> leaky ReLU
//   -> softmax over 3 lateral logits, softmax over 2 longitudinal logits
namespace dstcan::net {

inline constexpr int kK1Rows = 3, kK1Lanes = 3, kK1Time = 5;
inline constexpr int kK2Rows = 3, kK2Time = 5;
inline constexpr int kPool = 2;
inline constexpr double kProbEps = 1e-7;

struct Architecture {
  int rows = 13;
  int lanes = 3;
  int depth = 60;
  int c1 = 16;
  int c2 = 32;
  int fc = 128;
  double leak = 0.1;

  static Architecture for_grid(int rows, int lanes, int depth);
  int positions() const { return rows * depth; }  // spatial size after conv1 collapses the lanes
  int pooled_depth() const { return depth / kPool; }
  int flat() const { return c2 * rows * pooled_depth(); }
  void validate() const;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

// Offsets of each tensor inside the flat parameter vector.
struct Layout {
  std::size_t conv1_w, conv1_b, conv2_w, conv2_b, fc_w, fc_b, lat_w, lat_b, lon_w, lon_b, total;
  explicit Layout(const Architecture& a);
};

struct DecisionNetParams {
  Architecture arch;
  std::vector<double> values;

  static DecisionNetParams zeros(const Architecture& arch);
  // Weights and offsets uniform in +/- 1/sqrt(fan_in).
  static DecisionNetParams random(const Architecture& arch, std::uint64_t seed);

  Layout layout() const { return Layout(arch); }
  std::span<double> tensor(std::size_t offset, std::size_t count) { return std::span(values).subspan(offset, count); }

  friend bool operator==(const DecisionNetParams&, const DecisionNetParams&) = default;
};

struct DecisionOutput {
  std::array<double, kNumLateral> lat_probs{};
  std::array<double, kNumLongitudinal> lon_probs{};
};

// Input is a row-major (row, lane, time) grid of arch.rows * arch.lanes * arch.depth values.
DecisionOutput net_forward(const DecisionNetParams& params, std::span<const double> input);
// Throws UsageError when the grid dims differ from the architecture.
DecisionOutput net_forward(const DecisionNetParams& params, const grid::ContextGrid& grid);
std::vector<DecisionOutput> net_forward_batch(const DecisionNetParams& params,
                                              std::span<const std::span<const double>> inputs);

// Mean binary cross entropy over the five one-hot components, probabilities
// clamped to [1e-7, 1 - 1e-7].
double bce_loss(const DecisionOutput& output, const ManeuverLabel& target);
double bce_loss(std::span<const DecisionOutput> outputs, std::span<const ManeuverLabel> targets);

// Argmax per head; ties go to the lower class index.
ManeuverLabel predict_from_output(const DecisionOutput& output);
ManeuverLabel predict_maneuver(const DecisionNetParams& params, const grid::ContextGrid& grid);

struct Example {
  std::span<const double> input;
  ManeuverLabel label;
};

struct NetGradient {
  std::vector<double> grad;  // same layout as DecisionNetParams::values
  double loss = 0.0;         // mean bce_loss over the batch
  std::vector<DecisionOutput> outputs;
};

// Exact gradients of the batch-mean bce_loss. Throws UsageError on an empty batch.
NetGradient net_gradients(const DecisionNetParams& params, std::span<const Example> batch);

struct RmsPropConfig {
  double lr = 1e-3;
  double decay = 0.99;
  double eps = 1e-8;
};

struct OptState {
  std::vector<double> accum;
  std::int64_t steps = 0;

  static OptState for_params(const DecisionNetParams& params) { return {std::vector<double>(params.values.size()), 0}; }
};

// accum = decay * accum + (1 - decay) * g^2; param -= lr * g / (sqrt(accum) + eps).
void rmsprop_step(DecisionNetParams& params, std::span<const double> grads, OptState& opt, const RmsPropConfig& config);

// Training samples kept as float32 grids, as stored in the grid archive.
struct Dataset {
  std::size_t cells = 0;
  std::vector<float> inputs;
  std::vector<ManeuverLabel> labels;
  std::vector<std::uint64_t> ids;

  std::size_t size() const { return labels.size(); }
  std::span<const float> input(std::size_t i) const { return std::span(inputs).subspan(i * cells, cells); }
  void add(std::uint64_t id, std::span<const double> grid, const ManeuverLabel& label);
  void add(std::uint64_t id, std::span<const float> grid, const ManeuverLabel& label);
};

struct TrainConfig {
  int epochs = 12;
  int batch = 128;
  RmsPropConfig rmsprop;
  std::uint64_t seed = 0;
  bool regularize = true;
};

struct EpochStats {
  double loss = 0.0;                 // mean training loss over the epoch's samples
  std::vector<std::size_t> correct;  // dataset indices predicted right (both heads) before their update
};

// One seeded pass over `indices` in shuffled mini-batches.
EpochStats train_epoch(DecisionNetParams& params, OptState& opt, const Dataset& data, std::vector<std::size_t> indices,
                       const TrainConfig& config, Rng& rng);

struct TrainResult {
  DecisionNetParams params;
  std::vector<std::uint64_t> removed_ids;   // correct during epoch 1 (regularized runs only)
  std::vector<std::uint64_t> retained_ids;  // trained on in epochs 2..E
  std::vector<double> epoch_loss;
  bool empty_after_filter = false;  // every sample was removed; params are the epoch-1 ones
};

// Epoch 1 trains on everything and records the samples whose decision was
// already right; with regularization those are dropped for epochs 2..E.
// Throws UsageError on an empty dataset or epochs < 1.
TrainResult train_regularized(const DecisionNetParams& init, const Dataset& data, const TrainConfig& config,
                              const std::function<void(int, double)>& on_epoch = {});

double accuracy(const DecisionNetParams& params, const Dataset& data);
std::vector<ManeuverLabel> predict_all(const DecisionNetParams& params, const Dataset& data);

inline constexpr int kCheckpointVersion = 1;
nlohmann::json to_json(const DecisionNetParams& params);
DecisionNetParams net_from_json(const nlohmann::json& doc);
void save_checkpoint(const DecisionNetParams& params, const std::string& path);
DecisionNetParams load_checkpoint(const std::string& path);

}  // namespace dstcan::net
