#include "dstcan/decision_net.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "dstcan/errors.hpp"

namespace dstcan::net {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Map = Eigen::Map<RowMat>;
using CMap = Eigen::Map<const RowMat>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

constexpr int kK1Taps = kK1Rows * kK1Lanes * kK1Time;
constexpr int kK2Taps = kK2Rows * kK2Time;
constexpr int kOutputs = kNumLateral + kNumLongitudinal;

}  // namespace

Architecture Architecture::for_grid(int rows, int lanes, int depth) {
  Architecture a;
  a.rows = rows;
  a.lanes = lanes;
  a.depth = depth;
  a.validate();
  return a;
}

void Architecture::validate() const {
  if (rows < 1 || depth < kPool) throw UsageError("architecture needs rows >= 1 and depth >= 2");
  if (lanes != kK1Lanes) throw UsageError("architecture expects exactly 3 lanes");
  if (c1 < 1 || c2 < 1 || fc < 1) throw UsageError("architecture widths must be positive");
  if (!(leak >= 0.0 && leak < 1.0)) throw UsageError("leaky-ReLU slope must lie in [0, 1)");
}

Layout::Layout(const Architecture& a) {
  std::size_t off = 0;
  auto take = [&off](std::size_t n) {
    const auto o = off;
    off += n;
    return o;
  };
  const auto c1 = static_cast<std::size_t>(a.c1), c2 = static_cast<std::size_t>(a.c2);
  const auto fcw = static_cast<std::size_t>(a.fc);
  conv1_w = take(c1 * kK1Taps);
  conv1_b = take(c1);
  conv2_w = take(c2 * c1 * kK2Taps);
  conv2_b = take(c2);
  fc_w = take(fcw * static_cast<std::size_t>(a.flat()));
  fc_b = take(fcw);
  lat_w = take(kNumLateral * fcw);
  lat_b = take(kNumLateral);
  lon_w = take(kNumLongitudinal * fcw);
  lon_b = take(kNumLongitudinal);
  total = off;
}

DecisionNetParams DecisionNetParams::zeros(const Architecture& arch) {
  arch.validate();
  return {arch, std::vector<double>(Layout(arch).total, 0.0)};
}

DecisionNetParams DecisionNetParams::random(const Architecture& arch, std::uint64_t seed) {
  DecisionNetParams p = zeros(arch);
  const Layout L(arch);
  Rng rng(seed);
  auto fill = [&](std::size_t from, std::size_t to, double fan_in) {
    const double bound = 1.0 / std::sqrt(fan_in);
    for (std::size_t i = from; i < to; ++i) p.values[i] = rng.uniform(-bound, bound);
  };
  fill(L.conv1_w, L.conv2_w, kK1Taps);
  fill(L.conv2_w, L.fc_w, static_cast<double>(arch.c1) * kK2Taps);
  fill(L.fc_w, L.lat_w, arch.flat());
  fill(L.lat_w, L.total, arch.fc);
  return p;
}

// ---------------------------------------------------------------------------
// Convolution stack

namespace {

struct Workspace {
  RowMat col1, a1, h1, col2, a2, h2;
  RowMat g_h2, g_a2, g_col2, g_h1, g_a1;
};

struct ConvCache {
  RowMat a1, a2;
  std::vector<int> argmax;  // per flattened output, index into the c2 x positions grid
};

// Rows are (kernel row, lane, time) taps; columns are output positions r * T + t.
void im2col_conv1(const Architecture& a, const double* x, RowMat& col) {
  const int R = a.rows, T = a.depth;
  col.setZero(kK1Taps, R * T);
  for (int dr = 0; dr < kK1Rows; ++dr)
    for (int l = 0; l < kK1Lanes; ++l)
      for (int dt = 0; dt < kK1Time; ++dt) {
        const int q = (dr * kK1Lanes + l) * kK1Time + dt;
        const int shift = dt - kK1Time / 2;
        const int t0 = std::max(0, -shift), t1 = std::min(T, T - shift);
        for (int r = 0; r < R; ++r) {
          const int rs = r + dr - kK1Rows / 2;
          if (rs < 0 || rs >= R) continue;
          const double* src = x + (static_cast<std::ptrdiff_t>(rs) * a.lanes + l) * T;
          double* dst = &col(q, r * T);
          for (int t = t0; t < t1; ++t) dst[t] = src[t + shift];
        }
      }
}

// Rows are (input channel, kernel row, time) taps.
void im2col_conv2(const Architecture& a, const RowMat& h1, RowMat& col) {
  const int R = a.rows, T = a.depth;
  col.setZero(static_cast<Eigen::Index>(a.c1) * kK2Taps, R * T);
  for (int c = 0; c < a.c1; ++c)
    for (int dr = 0; dr < kK2Rows; ++dr)
      for (int dt = 0; dt < kK2Time; ++dt) {
        const int q = (c * kK2Rows + dr) * kK2Time + dt;
        const int shift = dt - kK2Time / 2;
        const int t0 = std::max(0, -shift), t1 = std::min(T, T - shift);
        for (int r = 0; r < R; ++r) {
          const int rs = r + dr - kK2Rows / 2;
          if (rs < 0 || rs >= R) continue;
          const double* src = &h1(c, rs * T);
          double* dst = &col(q, r * T);
          for (int t = t0; t < t1; ++t) dst[t] = src[t + shift];
        }
      }
}

void col2im_conv2(const Architecture& a, const RowMat& g_col, RowMat& g_h1) {
  const int R = a.rows, T = a.depth;
  g_h1.setZero(a.c1, R * T);
  for (int c = 0; c < a.c1; ++c)
    for (int dr = 0; dr < kK2Rows; ++dr)
      for (int dt = 0; dt < kK2Time; ++dt) {
        const int q = (c * kK2Rows + dr) * kK2Time + dt;
        const int shift = dt - kK2Time / 2;
        const int t0 = std::max(0, -shift), t1 = std::min(T, T - shift);
        for (int r = 0; r < R; ++r) {
          const int rs = r + dr - kK2Rows / 2;
          if (rs < 0 || rs >= R) continue;
          double* dst = &g_h1(c, rs * T);
          const double* src = &g_col(q, r * T);
          for (int t = t0; t < t1; ++t) dst[t + shift] += src[t];
        }
      }
}

void leaky(const RowMat& a, RowMat& h, double leak) { h = a.cwiseMax(leak * a); }

void leaky_backward(const RowMat& a, RowMat& g, double leak) {
  g = (a.array() > 0.0).select(g, leak * g);
}

// Conv stack for one sample; writes the pooled, flattened activations to z.
void conv_forward(const DecisionNetParams& p, const Layout& L, const double* x, Workspace& ws, ConvCache* cache,
                  double* z) {
  const Architecture& a = p.arch;
  const int T = a.depth, Tp = a.pooled_depth(), R = a.rows;
  const CMap k1(p.values.data() + L.conv1_w, a.c1, kK1Taps);
  const CVecMap b1(p.values.data() + L.conv1_b, a.c1);
  const CMap k2(p.values.data() + L.conv2_w, a.c2, static_cast<Eigen::Index>(a.c1) * kK2Taps);
  const CVecMap b2(p.values.data() + L.conv2_b, a.c2);

  im2col_conv1(a, x, ws.col1);
  ws.a1.noalias() = k1 * ws.col1;
  ws.a1.colwise() += b1;
  leaky(ws.a1, ws.h1, a.leak);
  im2col_conv2(a, ws.h1, ws.col2);
  ws.a2.noalias() = k2 * ws.col2;
  ws.a2.colwise() += b2;
  leaky(ws.a2, ws.h2, a.leak);

  if (cache) {
    cache->a1 = ws.a1;
    cache->a2 = ws.a2;
    cache->argmax.resize(static_cast<std::size_t>(a.flat()));
  }
  for (int c = 0; c < a.c2; ++c)
    for (int r = 0; r < R; ++r)
      for (int tp = 0; tp < Tp; ++tp) {
        const int i0 = r * T + kPool * tp;
        int best = i0;
        for (int k = 1; k < kPool; ++k)
          if (ws.h2(c, i0 + k) > ws.h2(c, best)) best = i0 + k;
        const auto out = static_cast<std::size_t>((c * R + r) * Tp + tp);
        z[out] = ws.h2(c, best);
        if (cache) cache->argmax[out] = c * R * T + best;
      }
}

// Accumulates conv parameter gradients for one sample given dL/dz.
void conv_backward(const DecisionNetParams& p, const Layout& L, const double* x, const ConvCache& cache,
                   const double* g_z, Workspace& ws, std::vector<double>& grad) {
  const Architecture& a = p.arch;
  const int RT = a.positions();
  const CMap k2(p.values.data() + L.conv2_w, a.c2, static_cast<Eigen::Index>(a.c1) * kK2Taps);
  Map g_k1(grad.data() + L.conv1_w, a.c1, kK1Taps);
  Eigen::Map<Eigen::VectorXd> g_b1(grad.data() + L.conv1_b, a.c1);
  Map g_k2(grad.data() + L.conv2_w, a.c2, static_cast<Eigen::Index>(a.c1) * kK2Taps);
  Eigen::Map<Eigen::VectorXd> g_b2(grad.data() + L.conv2_b, a.c2);

  ws.g_a2.setZero(a.c2, RT);
  double* g_a2 = ws.g_a2.data();
  for (std::size_t i = 0; i < cache.argmax.size(); ++i) g_a2[cache.argmax[i]] += g_z[i];
  leaky_backward(cache.a2, ws.g_a2, a.leak);
  g_b2 += ws.g_a2.rowwise().sum();

  leaky(cache.a1, ws.h1, a.leak);
  im2col_conv2(a, ws.h1, ws.col2);
  g_k2.noalias() += ws.g_a2 * ws.col2.transpose();
  ws.g_col2.noalias() = k2.transpose() * ws.g_a2;
  col2im_conv2(a, ws.g_col2, ws.g_a1);
  leaky_backward(cache.a1, ws.g_a1, a.leak);
  g_b1 += ws.g_a1.rowwise().sum();

  im2col_conv1(a, x, ws.col1);
  g_k1.noalias() += ws.g_a1 * ws.col1.transpose();
}

struct HeadPass {
  RowMat f, hf, lat, lon;
};

void softmax_rows(RowMat& logits) {
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - m).exp();
    logits.row(i) /= logits.row(i).sum();
  }
}

// Dense layers over a batch of flattened conv outputs (one row per sample).
void heads_forward(const DecisionNetParams& p, const Layout& L, const RowMat& z, HeadPass& hp) {
  const Architecture& a = p.arch;
  const CMap wf(p.values.data() + L.fc_w, a.fc, a.flat());
  const Eigen::Map<const RowVec> bf(p.values.data() + L.fc_b, a.fc);
  const CMap wl(p.values.data() + L.lat_w, kNumLateral, a.fc);
  const Eigen::Map<const RowVec> bl(p.values.data() + L.lat_b, kNumLateral);
  const CMap wo(p.values.data() + L.lon_w, kNumLongitudinal, a.fc);
  const Eigen::Map<const RowVec> bo(p.values.data() + L.lon_b, kNumLongitudinal);

  hp.f.noalias() = z * wf.transpose();
  hp.f.rowwise() += bf;
  leaky(hp.f, hp.hf, a.leak);
  hp.lat.noalias() = hp.hf * wl.transpose();
  hp.lat.rowwise() += bl;
  hp.lon.noalias() = hp.hf * wo.transpose();
  hp.lon.rowwise() += bo;
  softmax_rows(hp.lat);
  softmax_rows(hp.lon);
}

DecisionOutput output_row(const HeadPass& hp, Eigen::Index i) {
  DecisionOutput out;
  for (int k = 0; k < kNumLateral; ++k) out.lat_probs[k] = hp.lat(i, k);
  for (int k = 0; k < kNumLongitudinal; ++k) out.lon_probs[k] = hp.lon(i, k);
  return out;
}

double clamp_prob(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

double component_bce(double p, double y) {
  const double q = clamp_prob(p);
  return -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
}

// d component_bce / d p, zero where the clamp is active.
double component_bce_grad(double p, double y) {
  if (p < kProbEps || p > 1.0 - kProbEps) return 0.0;
  return -(y / p - (1.0 - y) / (1.0 - p));
}

void check_input(const Architecture& a, std::span<const double> input) {
  if (input.size() != static_cast<std::size_t>(a.rows * a.lanes * a.depth))
    throw UsageError("input has " + std::to_string(input.size()) + " cells, network expects " +
                     std::to_string(a.rows) + "x" + std::to_string(a.lanes) + "x" + std::to_string(a.depth));
}

}  // namespace

std::vector<DecisionOutput> net_forward_batch(const DecisionNetParams& params,
                                              std::span<const std::span<const double>> inputs) {
  params.arch.validate();
  const Layout L(params.arch);
  if (params.values.size() != L.total) throw UsageError("parameter vector does not match the architecture");
  RowMat z(static_cast<Eigen::Index>(inputs.size()), params.arch.flat());
  Workspace ws;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    check_input(params.arch, inputs[i]);
    conv_forward(params, L, inputs[i].data(), ws, nullptr, &z(static_cast<Eigen::Index>(i), 0));
  }
  HeadPass hp;
  heads_forward(params, L, z, hp);
  std::vector<DecisionOutput> out;
  out.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) out.push_back(output_row(hp, static_cast<Eigen::Index>(i)));
  return out;
}

DecisionOutput net_forward(const DecisionNetParams& params, std::span<const double> input) {
  const std::span<const double> one[] = {input};
  return net_forward_batch(params, one).front();
}

DecisionOutput net_forward(const DecisionNetParams& params, const grid::ContextGrid& grid) {
  const auto& a = params.arch;
  if (grid.rows() != a.rows || grid.lanes() != a.lanes || grid.depth() != a.depth)
    throw UsageError("grid " + std::to_string(grid.rows()) + "x" + std::to_string(grid.lanes()) + "x" +
                     std::to_string(grid.depth()) + " does not match network input " + std::to_string(a.rows) + "x" +
                     std::to_string(a.lanes) + "x" + std::to_string(a.depth));
  return net_forward(params, grid.values());
}

namespace {

std::array<double, kOutputs> one_hot(const ManeuverLabel& t) {
  std::array<double, kOutputs> y{};
  y[static_cast<std::size_t>(t.lateral)] = 1.0;
  y[kNumLateral + static_cast<std::size_t>(t.longitudinal)] = 1.0;
  return y;
}

std::array<double, kOutputs> probs_of(const DecisionOutput& o) {
  return {o.lat_probs[0], o.lat_probs[1], o.lat_probs[2], o.lon_probs[0], o.lon_probs[1]};
}

}  // namespace

double bce_loss(const DecisionOutput& output, const ManeuverLabel& target) {
  const auto y = one_hot(target);
  const auto p = probs_of(output);
  double sum = 0.0;
  for (int k = 0; k < kOutputs; ++k) sum += component_bce(p[k], y[k]);
  return sum / kOutputs;
}

double bce_loss(std::span<const DecisionOutput> outputs, std::span<const ManeuverLabel> targets) {
  if (outputs.size() != targets.size() || outputs.empty()) throw UsageError("bce_loss: batch sizes differ or are zero");
  double sum = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i) sum += bce_loss(outputs[i], targets[i]);
  return sum / static_cast<double>(outputs.size());
}

ManeuverLabel predict_from_output(const DecisionOutput& o) {
  int lat = 0;
  for (int k = 1; k < kNumLateral; ++k)
    if (o.lat_probs[k] > o.lat_probs[lat]) lat = k;
  const int lon = o.lon_probs[1] > o.lon_probs[0] ? 1 : 0;
  return {static_cast<Lateral>(lat), static_cast<Longitudinal>(lon)};
}

ManeuverLabel predict_maneuver(const DecisionNetParams& params, const grid::ContextGrid& grid) {
  return predict_from_output(net_forward(params, grid));
}

NetGradient net_gradients(const DecisionNetParams& params, std::span<const Example> batch) {
  if (batch.empty()) throw UsageError("net_gradients: empty batch");
  params.arch.validate();
  const Architecture& a = params.arch;
  const Layout L(a);
  if (params.values.size() != L.total) throw UsageError("parameter vector does not match the architecture");
  const auto B = static_cast<Eigen::Index>(batch.size());

  RowMat z(B, a.flat());
  std::vector<ConvCache> caches(batch.size());
  Workspace ws;
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto& ex = batch[static_cast<std::size_t>(i)];
    check_input(a, ex.input);
    conv_forward(params, L, ex.input.data(), ws, &caches[static_cast<std::size_t>(i)], &z(i, 0));
  }
  HeadPass hp;
  heads_forward(params, L, z, hp);

  NetGradient result;
  result.grad.assign(L.total, 0.0);
  result.outputs.reserve(batch.size());
  const double scale = 1.0 / (static_cast<double>(B) * kOutputs);
  RowMat g_lat(B, kNumLateral), g_lon(B, kNumLongitudinal);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto out = output_row(hp, i);
    result.outputs.push_back(out);
    const auto y = one_hot(batch[static_cast<std::size_t>(i)].label);
    loss += bce_loss(out, batch[static_cast<std::size_t>(i)].label);
    // Softmax Jacobian: dL/dz_j = p_j (g_j - sum_k g_k p_k).
    auto head = [&]<std::size_t N>(const std::array<double, N>& probs, std::size_t offset, RowMat& g_logits) {
      double dot = 0.0;
      std::array<double, N> g{};
      for (std::size_t k = 0; k < N; ++k) {
        g[k] = scale * component_bce_grad(probs[k], y[offset + k]);
        dot += g[k] * probs[k];
      }
      for (std::size_t k = 0; k < N; ++k) g_logits(i, static_cast<Eigen::Index>(k)) = probs[k] * (g[k] - dot);
    };
    head(out.lat_probs, 0, g_lat);
    head(out.lon_probs, kNumLateral, g_lon);
  }
  result.loss = loss / static_cast<double>(B);

  auto& grad = result.grad;
  const CMap wf(params.values.data() + L.fc_w, a.fc, a.flat());
  const CMap wl(params.values.data() + L.lat_w, kNumLateral, a.fc);
  const CMap wo(params.values.data() + L.lon_w, kNumLongitudinal, a.fc);
  Map(grad.data() + L.lat_w, kNumLateral, a.fc).noalias() = g_lat.transpose() * hp.hf;
  Eigen::Map<RowVec>(grad.data() + L.lat_b, kNumLateral) = g_lat.colwise().sum();
  Map(grad.data() + L.lon_w, kNumLongitudinal, a.fc).noalias() = g_lon.transpose() * hp.hf;
  Eigen::Map<RowVec>(grad.data() + L.lon_b, kNumLongitudinal) = g_lon.colwise().sum();

  RowMat g_f = g_lat * wl + g_lon * wo;
  leaky_backward(hp.f, g_f, a.leak);
  Map(grad.data() + L.fc_w, a.fc, a.flat()).noalias() = g_f.transpose() * z;
  Eigen::Map<RowVec>(grad.data() + L.fc_b, a.fc) = g_f.colwise().sum();
  RowMat g_z = g_f * wf;

  for (Eigen::Index i = 0; i < B; ++i)
    conv_backward(params, L, batch[static_cast<std::size_t>(i)].input.data(), caches[static_cast<std::size_t>(i)],
                  &g_z(i, 0), ws, grad);
  return result;
}

void rmsprop_step(DecisionNetParams& params, std::span<const double> grads, OptState& opt, const RmsPropConfig& c) {
  if (!(c.lr > 0.0)) throw UsageError("RMSProp learning rate must be positive");
  if (!(c.decay >= 0.0 && c.decay <= 1.0)) throw UsageError("RMSProp decay must lie in [0, 1]");
  if (grads.size() != params.values.size() || opt.accum.size() != params.values.size())
    throw UsageError("RMSProp shapes do not match the parameters");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const double g = grads[i];
    opt.accum[i] = c.decay * opt.accum[i] + (1.0 - c.decay) * g * g;
    params.values[i] -= c.lr * g / (std::sqrt(opt.accum[i]) + c.eps);
  }
  ++opt.steps;
}

void Dataset::add(std::uint64_t id, std::span<const double> grid, const ManeuverLabel& label) {
  if (cells == 0) cells = grid.size();
  if (grid.size() != cells) throw UsageError("dataset grids differ in size");
  for (double v : grid) inputs.push_back(static_cast<float>(v));
  labels.push_back(label);
  ids.push_back(id);
}

void Dataset::add(std::uint64_t id, std::span<const float> grid, const ManeuverLabel& label) {
  if (cells == 0) cells = grid.size();
  if (grid.size() != cells) throw UsageError("dataset grids differ in size");
  inputs.insert(inputs.end(), grid.begin(), grid.end());
  labels.push_back(label);
  ids.push_back(id);
}

EpochStats train_epoch(DecisionNetParams& params, OptState& opt, const Dataset& data, std::vector<std::size_t> indices,
                       const TrainConfig& config, Rng& rng) {
  if (config.batch < 1) throw UsageError("batch size must be >= 1");
  rng.shuffle(indices.begin(), indices.end());
  EpochStats stats;
  std::vector<double> buffer;
  std::vector<Example> batch;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(config.batch)) {
    const auto end = std::min(indices.size(), start + static_cast<std::size_t>(config.batch));
    buffer.resize((end - start) * data.cells);
    batch.clear();
    for (std::size_t k = start; k < end; ++k) {
      const auto src = data.input(indices[k]);
      double* dst = buffer.data() + (k - start) * data.cells;
      std::copy(src.begin(), src.end(), dst);
      batch.push_back({std::span<const double>(dst, data.cells), data.labels[indices[k]]});
    }
    const auto g = net_gradients(params, batch);
    if (!std::isfinite(g.loss)) throw NumericError("decision network loss became non-finite");
    loss_sum += g.loss * static_cast<double>(end - start);
    for (std::size_t k = start; k < end; ++k)
      if (predict_from_output(g.outputs[k - start]) == data.labels[indices[k]]) stats.correct.push_back(indices[k]);
    rmsprop_step(params, g.grad, opt, config.rmsprop);
  }
  stats.loss = indices.empty() ? 0.0 : loss_sum / static_cast<double>(indices.size());
  std::sort(stats.correct.begin(), stats.correct.end());
  return stats;
}

TrainResult train_regularized(const DecisionNetParams& init, const Dataset& data, const TrainConfig& config,
                              const std::function<void(int, double)>& on_epoch) {
  if (data.size() == 0) throw UsageError("training dataset is empty");
  if (config.epochs < 1) throw UsageError("epochs must be >= 1");
  if (data.cells != static_cast<std::size_t>(init.arch.rows * init.arch.lanes * init.arch.depth))
    throw UsageError("dataset grids do not match the network input size");

  TrainResult result;
  result.params = init;
  OptState opt = OptState::for_params(init);
  Rng rng(config.seed);

  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  auto first = train_epoch(result.params, opt, data, all, config, rng);
  result.epoch_loss.push_back(first.loss);
  if (on_epoch) on_epoch(1, first.loss);

  std::vector<std::size_t> train_set = all;
  if (config.regularize) {
    std::vector<char> removed(data.size(), 0);
    for (auto i : first.correct) removed[i] = 1;
    train_set.clear();
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (removed[i]) result.removed_ids.push_back(data.ids[i]);
      else train_set.push_back(i);
    }
  }
  for (auto i : train_set) result.retained_ids.push_back(data.ids[i]);
  if (train_set.empty()) {
    result.empty_after_filter = true;
    return result;
  }
  for (int epoch = 2; epoch <= config.epochs; ++epoch) {
    auto stats = train_epoch(result.params, opt, data, train_set, config, rng);
    result.epoch_loss.push_back(stats.loss);
    if (on_epoch) on_epoch(epoch, stats.loss);
  }
  return result;
}

std::vector<ManeuverLabel> predict_all(const DecisionNetParams& params, const Dataset& data) {
  std::vector<ManeuverLabel> out;
  out.reserve(data.size());
  constexpr std::size_t kChunk = 64;
  std::vector<double> buffer;
  std::vector<std::span<const double>> inputs;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const auto end = std::min(data.size(), start + kChunk);
    buffer.resize((end - start) * data.cells);
    inputs.clear();
    for (std::size_t k = start; k < end; ++k) {
      const auto src = data.input(k);
      double* dst = buffer.data() + (k - start) * data.cells;
      std::copy(src.begin(), src.end(), dst);
      inputs.emplace_back(dst, data.cells);
    }
    for (const auto& o : net_forward_batch(params, inputs)) out.push_back(predict_from_output(o));
  }
  return out;
}

double accuracy(const DecisionNetParams& params, const Dataset& data) {
  if (data.size() == 0) throw UsageError("accuracy of an empty dataset");
  const auto pred = predict_all(params, data);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

struct NamedTensor {
  const char* name;
  std::size_t offset;
  std::vector<int> shape;
};

std::vector<NamedTensor> named_tensors(const Architecture& a) {
  const Layout L(a);
  return {
      {"conv1.weight", L.conv1_w, {a.c1, 1, kK1Rows, kK1Lanes, kK1Time}},
      {"conv1.bias", L.conv1_b, {a.c1}},
      {"conv2.weight", L.conv2_w, {a.c2, a.c1, kK2Rows, 1, kK2Time}},
      {"conv2.bias", L.conv2_b, {a.c2}},
      {"fc_shared.weight", L.fc_w, {a.fc, a.flat()}},
      {"fc_shared.bias", L.fc_b, {a.fc}},
      {"head_lat.weight", L.lat_w, {kNumLateral, a.fc}},
      {"head_lat.bias", L.lat_b, {kNumLateral}},
      {"head_lon.weight", L.lon_w, {kNumLongitudinal, a.fc}},
      {"head_lon.bias", L.lon_b, {kNumLongitudinal}},
  };
}

std::size_t element_count(const std::vector<int>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
}

}  // namespace

nlohmann::json to_json(const DecisionNetParams& p) {
  const auto& a = p.arch;
  nlohmann::json arch = {
      {"input", {a.rows, a.lanes, a.depth}},
      {"conv1", {{"channels", a.c1}, {"kernel", {kK1Rows, kK1Lanes, kK1Time}}, {"padding", {1, 0, 2}}}},
      {"conv2", {{"channels", a.c2}, {"kernel", {kK2Rows, 1, kK2Time}}, {"padding", {1, 0, 2}}}},
      {"pool", {1, 1, kPool}},
      {"fc_shared", a.fc},
      {"leak", a.leak},
  };
  nlohmann::json arrays = nlohmann::json::object();
  for (const auto& t : named_tensors(a)) {
    const auto n = element_count(t.shape);
    arrays[t.name] = {{"shape", t.shape},
                      {"data", std::vector<double>(p.values.begin() + static_cast<std::ptrdiff_t>(t.offset),
                                                   p.values.begin() + static_cast<std::ptrdiff_t>(t.offset + n))}};
  }
  return {{"format", "dstcan-decision-net"}, {"version", kCheckpointVersion}, {"architecture", arch},
          {"params", arrays}};
}

DecisionNetParams net_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "dstcan-decision-net") throw DataError("not a decision-net checkpoint");
    if (doc.at("version").get<int>() != kCheckpointVersion) throw DataError("unsupported decision-net checkpoint version");
    const auto& arch = doc.at("architecture");
    const auto input = arch.at("input").get<std::vector<int>>();
    if (input.size() != 3) throw DataError("architecture input must have three dims");
    Architecture a;
    a.rows = input[0];
    a.lanes = input[1];
    a.depth = input[2];
    a.c1 = arch.at("conv1").at("channels").get<int>();
    a.c2 = arch.at("conv2").at("channels").get<int>();
    a.fc = arch.at("fc_shared").get<int>();
    a.leak = arch.at("leak").get<double>();
    try {
      a.validate();
    } catch (const UsageError& e) {
      throw DataError(std::string("checkpoint architecture invalid: ") + e.what());
    }
    DecisionNetParams p = DecisionNetParams::zeros(a);
    const auto& arrays = doc.at("params");
    for (const auto& t : named_tensors(a)) {
      const auto& entry = arrays.at(t.name);
      if (entry.at("shape").get<std::vector<int>>() != t.shape)
        throw DataError(std::string("checkpoint tensor '") + t.name + "' has the wrong shape");
      const auto& data = entry.at("data");
      if (data.size() != element_count(t.shape))
        throw DataError(std::string("checkpoint tensor '") + t.name + "' has the wrong size");
      std::size_t i = t.offset;
      for (const auto& v : data) p.values[i++] = v.get<double>();
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed decision-net checkpoint: ") + e.what());
  }
}

void save_checkpoint(const DecisionNetParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out << to_json(params).dump() << '\n';
  if (!out) throw DataError("failed writing " + path);
}

DecisionNetParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return net_from_json(doc);
}

}  // namespace dstcan::net
