#include "dstcan/mnn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <numbers>

#include <ceres/gradient_problem.h>
#include <ceres/gradient_problem_solver.h>
#include <glog/logging.h>

#include "dstcan/errors.hpp"

namespace dstcan::mnn {

MnnParams MnnParams::zeros(int hidden) {
  if (hidden < 1) throw UsageError("hidden width must be >= 1");
  MnnParams p;
  p.hidden = hidden;
  const auto h = static_cast<std::size_t>(hidden);
  p.w_in.assign(kIo * h, 0.0);
  p.f_in.assign(kIo * h, 0.0);
  p.w_hid.assign(h * kIo, 0.0);
  p.f_hid.assign(h * kIo, 0.0);
  p.alpha_hid.assign(h, 0.0);
  return p;
}

MnnParams MnnParams::random(std::uint64_t seed, int hidden) {
  MnnParams p = zeros(hidden);
  Rng rng(seed);
  auto fill = [&](std::span<double> xs) {
    for (auto& x : xs) x = rng.uniform(-0.5, 0.5);
  };
  fill(p.w_in);
  fill(p.f_in);
  fill(p.w_hid);
  fill(p.f_hid);
  fill(p.beta_out);
  p.alpha_in.fill(0.5);
  std::fill(p.alpha_hid.begin(), p.alpha_hid.end(), 0.5);
  p.alpha_out.fill(0.5);
  return p;
}

std::vector<double> MnnParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(size());
  auto put = [&](std::span<const double> xs) { flat.insert(flat.end(), xs.begin(), xs.end()); };
  put(w_in);
  put(f_in);
  put(alpha_in);
  put(w_hid);
  put(f_hid);
  put(alpha_hid);
  put(alpha_out);
  put(beta_out);
  return flat;
}

void MnnParams::assign(std::span<const double> flat) {
  if (flat.size() != size()) throw UsageError("flat parameter vector has the wrong length");
  auto it = flat.begin();
  auto take = [&](std::span<double> xs) {
    std::copy(it, it + static_cast<std::ptrdiff_t>(xs.size()), xs.begin());
    it += static_cast<std::ptrdiff_t>(xs.size());
  };
  take(w_in);
  take(f_in);
  take(alpha_in);
  take(w_hid);
  take(f_hid);
  take(alpha_hid);
  take(alpha_out);
  take(beta_out);
}

void MnnParams::clamp_alphas() {
  auto clamp = [](std::span<double> xs) {
    for (auto& a : xs) a = std::clamp(a, 0.0, 1.0);
  };
  clamp(alpha_in);
  clamp(alpha_hid);
  clamp(alpha_out);
}

MnnState mnn_reset(const MnnParams& params) {
  MnnState s;
  s.v_hid.assign(static_cast<std::size_t>(params.hidden), 0.0);
  s.psi_prev_hid.assign(static_cast<std::size_t>(params.hidden), 0.0);
  return s;
}

namespace {

void check_shapes(const MnnParams& p) {
  const auto h = static_cast<std::size_t>(p.hidden);
  if (p.hidden < 1 || p.w_in.size() != kIo * h || p.f_in.size() != kIo * h || p.w_hid.size() != h * kIo ||
      p.f_hid.size() != h * kIo || p.alpha_hid.size() != h)
    throw UsageError("MNN parameter shapes are inconsistent with hidden width");
}

}  // namespace

Delta mnn_step(const MnnParams& p, MnnState& s, const Delta& input) {
  if (!std::isfinite(input.dx) || !std::isfinite(input.dy)) throw NumericError("non-finite MNN input");
  const int H = p.hidden;
  const std::array<double, kIo> u{input.dx, input.dy};

  for (int k = 0; k < kIo; ++k) s.v_in[k] = p.alpha_in[k] * s.psi_prev_in[k] + (1.0 - p.alpha_in[k]) * s.v_in[k];
  for (int k = 0; k < H; ++k)
    s.v_hid[k] = p.alpha_hid[k] * s.psi_prev_hid[k] + (1.0 - p.alpha_hid[k]) * s.v_hid[k];
  for (int j = 0; j < kIo; ++j)
    s.v_out[j] = p.alpha_out[j] * s.psi_prev_out[j] + (1.0 - p.alpha_out[j]) * s.v_out[j];

  std::array<double, kIo> y{};
  for (int j = 0; j < kIo; ++j) y[j] = p.beta_out[j] * s.v_out[j];
  for (int j = 0; j < H; ++j) {
    double z = 0.0;
    for (int k = 0; k < kIo; ++k) z += p.w_in[k * H + j] * u[k] + p.f_in[k * H + j] * s.v_in[k];
    const double h = std::tanh(z);
    for (int o = 0; o < kIo; ++o) y[o] += p.w_hid[j * kIo + o] * h + p.f_hid[j * kIo + o] * s.v_hid[j];
    s.psi_prev_hid[j] = h;
  }
  s.psi_prev_in = u;
  s.psi_prev_out = y;
  return {y[0], y[1]};
}

std::pair<Delta, MnnState> mnn_forward_step(const MnnParams& params, const MnnState& state, const Delta& input) {
  MnnState next = state;
  const Delta out = mnn_step(params, next, input);
  return {out, std::move(next)};
}

double mnn_loss(std::span<const std::vector<Position>> predicted, std::span<const std::vector<Position>> truth) {
  if (predicted.size() != truth.size()) throw UsageError("mnn_loss: vehicle counts differ");
  if (predicted.empty()) throw UsageError("mnn_loss: need at least one vehicle");
  double total = 0.0;
  for (std::size_t n = 0; n < predicted.size(); ++n) {
    const auto& p = predicted[n];
    const auto& t = truth[n];
    if (p.size() != t.size()) throw UsageError("mnn_loss: horizon lengths differ for vehicle " + std::to_string(n));
    if (p.empty()) throw UsageError("mnn_loss: horizon must be >= 1");
    double sq = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double ex = p[i].x - t[i].x;
      const double ey = p[i].y - t[i].y;
      sq += ex * ex + ey * ey;
    }
    total += std::sqrt(sq / static_cast<double>(p.size()));
  }
  return total / static_cast<double>(predicted.size());
}

std::vector<Delta> displacements(std::span<const TrackPoint> points) {
  std::vector<Delta> out;
  for (std::size_t i = 1; i < points.size(); ++i)
    out.push_back({points[i].x_lat - points[i - 1].x_lat, points[i].y_lon - points[i - 1].y_lon});
  return out;
}

Sequence make_sequence(std::span<const Delta> deltas) {
  Sequence s;
  for (std::size_t i = 1; i < deltas.size(); ++i) {
    s.inputs.push_back(deltas[i - 1]);
    s.targets.push_back(deltas[i]);
  }
  return s;
}

namespace {

void add_scaled(MnnParams& acc, const MnnParams& g, double scale) {
  auto add = [scale](std::span<double> a, std::span<const double> b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
  };
  add(acc.w_in, g.w_in);
  add(acc.f_in, g.f_in);
  add(acc.alpha_in, g.alpha_in);
  add(acc.w_hid, g.w_hid);
  add(acc.f_hid, g.f_hid);
  add(acc.alpha_hid, g.alpha_hid);
  add(acc.alpha_out, g.alpha_out);
  add(acc.beta_out, g.beta_out);
}

}  // namespace

GradientResult mnn_gradients(const MnnParams& p, std::span<const Delta> inputs, std::span<const Delta> targets) {
  check_shapes(p);
  if (inputs.empty()) throw UsageError("mnn_gradients: empty sequence");
  if (inputs.size() != targets.size()) throw UsageError("mnn_gradients: inputs and targets differ in length");
  const int H = p.hidden;
  const auto T = inputs.size();
  const auto uh = static_cast<std::size_t>(H);

  // Forward pass, recording every layer's memory and network outputs per step.
  std::vector<std::array<double, kIo>> u(T), v_in(T), v_out(T), y(T);
  std::vector<double> v_hid(T * uh), psi_hid(T * uh);
  GradientResult result{MnnParams::zeros(H), 0.0};
  {
    MnnState s = mnn_reset(p);
    for (std::size_t t = 0; t < T; ++t) {
      const Delta out = mnn_step(p, s, inputs[t]);
      u[t] = s.psi_prev_in;
      v_in[t] = s.v_in;
      v_out[t] = s.v_out;
      std::copy(s.v_hid.begin(), s.v_hid.end(), v_hid.begin() + static_cast<std::ptrdiff_t>(t * uh));
      std::copy(s.psi_prev_hid.begin(), s.psi_prev_hid.end(), psi_hid.begin() + static_cast<std::ptrdiff_t>(t * uh));
      y[t] = {out.dx, out.dy};
      const double ex = out.dx - targets[t].dx;
      const double ey = out.dy - targets[t].dy;
      result.sse += ex * ex + ey * ey;
    }
  }

  // Reverse pass. carry_* hold the adjoint of the memory outputs one step later.
  MnnGradients& g = result.grad;
  std::array<double, kIo> carry_in{}, carry_out{};
  std::vector<double> carry_hid(uh, 0.0), g_psi_hid(uh), g_z(uh);
  for (std::size_t t = T; t-- > 0;) {
    const double* vh = &v_hid[t * uh];
    const double* ph = &psi_hid[t * uh];
    const std::array<double, kIo> target{targets[t].dx, targets[t].dy};

    // Memory recursions into step t + 1 read psi(t) and v(t).
    for (int k = 0; k < kIo; ++k) g.alpha_in[k] += carry_in[k] * (u[t][k] - v_in[t][k]);
    for (int k = 0; k < H; ++k) g.alpha_hid[k] += carry_hid[k] * (ph[k] - vh[k]);
    for (int j = 0; j < kIo; ++j) g.alpha_out[j] += carry_out[j] * (y[t][j] - v_out[t][j]);

    std::array<double, kIo> g_y{};
    for (int j = 0; j < kIo; ++j) g_y[j] = 2.0 * (y[t][j] - target[j]) + p.alpha_out[j] * carry_out[j];

    std::array<double, kIo> g_v_out{};
    for (int j = 0; j < kIo; ++j) {
      g.beta_out[j] += g_y[j] * v_out[t][j];
      g_v_out[j] = p.beta_out[j] * g_y[j] + (1.0 - p.alpha_out[j]) * carry_out[j];
    }

    for (int k = 0; k < H; ++k) {
      double back_w = 0.0, back_f = 0.0;
      for (int j = 0; j < kIo; ++j) {
        g.w_hid[k * kIo + j] += ph[k] * g_y[j];
        g.f_hid[k * kIo + j] += vh[k] * g_y[j];
        back_w += p.w_hid[k * kIo + j] * g_y[j];
        back_f += p.f_hid[k * kIo + j] * g_y[j];
      }
      g_psi_hid[k] = back_w + p.alpha_hid[k] * carry_hid[k];
      g_z[k] = g_psi_hid[k] * (1.0 - ph[k] * ph[k]);
      // Becomes the hidden-memory adjoint carried to step t - 1.
      carry_hid[k] = back_f + (1.0 - p.alpha_hid[k]) * carry_hid[k];
    }

    std::array<double, kIo> g_v_in{};
    for (int k = 0; k < kIo; ++k) {
      double back = 0.0;
      for (int j = 0; j < H; ++j) {
        g.w_in[k * H + j] += u[t][k] * g_z[j];
        g.f_in[k * H + j] += v_in[t][k] * g_z[j];
        back += p.f_in[k * H + j] * g_z[j];
      }
      g_v_in[k] = back + (1.0 - p.alpha_in[k]) * carry_in[k];
    }
    carry_in = g_v_in;
    carry_out = g_v_out;
  }
  return result;
}

GradientResult mnn_gradients(const MnnParams& params, std::span<const Sequence> sequences) {
  if (sequences.empty()) throw UsageError("mnn_gradients: no sequences");
  GradientResult total{MnnParams::zeros(params.hidden), 0.0};
  for (const auto& s : sequences) {
    auto r = mnn_gradients(params, s.inputs, s.targets);
    add_scaled(total.grad, r.grad, 1.0);
    total.sse += r.sse;
  }
  return total;
}

double mnn_sse(const MnnParams& params, std::span<const Sequence> sequences) {
  double sse = 0.0;
  for (const auto& seq : sequences) {
    MnnState s = mnn_reset(params);
    for (std::size_t t = 0; t < seq.inputs.size(); ++t) {
      const Delta out = mnn_step(params, s, seq.inputs[t]);
      const double ex = out.dx - seq.targets[t].dx;
      const double ey = out.dy - seq.targets[t].dy;
      sse += ex * ex + ey * ey;
    }
  }
  return sse;
}

std::vector<Sequence> training_sequences(std::span<const Track> tracks, int window) {
  if (window < 3) throw UsageError("training window must hold at least 3 displacements");
  std::vector<Sequence> out;
  for (const auto& track : tracks) {
    const auto deltas = displacements(track.points);
    for (std::size_t start = 0; start + 2 <= deltas.size(); start += static_cast<std::size_t>(window)) {
      const auto len = std::min(deltas.size() - start, static_cast<std::size_t>(window));
      if (len < 2) break;
      out.push_back(make_sequence(std::span(deltas).subspan(start, len)));
    }
  }
  return out;
}

namespace {

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Full-batch SSE over unconstrained coordinates; alpha entries are logits.
class RefineObjective : public ceres::FirstOrderFunction {
 public:
  RefineObjective(const MnnParams& shape, std::span<const Sequence> sequences)
      : shape_(shape), sequences_(sequences), is_alpha_(shape.size(), false) {
    auto marks = MnnParams::zeros(shape.hidden);
    marks.alpha_in.fill(1.0);
    marks.alpha_out.fill(1.0);
    std::fill(marks.alpha_hid.begin(), marks.alpha_hid.end(), 1.0);
    const auto flat = marks.flatten();
    for (std::size_t i = 0; i < flat.size(); ++i) is_alpha_[i] = flat[i] == 1.0;
  }

  int NumParameters() const override { return static_cast<int>(shape_.size()); }

  std::vector<double> encode(const MnnParams& p) const {
    auto z = p.flatten();
    for (std::size_t i = 0; i < z.size(); ++i)
      if (is_alpha_[i]) {
        const double a = std::clamp(z[i], 1e-6, 1.0 - 1e-6);
        z[i] = std::log(a / (1.0 - a));
      }
    return z;
  }

  MnnParams decode(const double* z) const {
    std::vector<double> flat(z, z + shape_.size());
    for (std::size_t i = 0; i < flat.size(); ++i)
      if (is_alpha_[i]) flat[i] = logistic(flat[i]);
    auto p = shape_;
    p.assign(flat);
    return p;
  }

  bool Evaluate(const double* z, double* cost, double* gradient) const override {
    const auto r = mnn_gradients(decode(z), sequences_);
    if (!std::isfinite(r.sse)) return false;
    *cost = r.sse;
    if (gradient) {
      const auto g = r.grad.flatten();
      for (std::size_t i = 0; i < g.size(); ++i) {
        gradient[i] = g[i];
        if (is_alpha_[i]) {
          const double a = logistic(z[i]);
          gradient[i] *= a * (1.0 - a);
        }
      }
    }
    return true;
  }

 private:
  MnnParams shape_;
  std::span<const Sequence> sequences_;
  std::vector<bool> is_alpha_;
};

MnnParams refine(const MnnParams& start, std::span<const Sequence> sequences, int iterations) {
  auto* objective = new RefineObjective(start, sequences);
  auto z = objective->encode(start);
  ceres::GradientProblem problem(objective);
  ceres::GradientProblemSolver::Options options;
  options.max_num_iterations = iterations;
  options.function_tolerance = 1e-16;
  options.gradient_tolerance = 1e-14;
  options.parameter_tolerance = 1e-16;
  options.logging_type = ceres::SILENT;
  ceres::GradientProblemSolver::Summary summary;
  // Line-search misses are expected near convergence; keep them off stderr.
  const int log_level = FLAGS_minloglevel;
  FLAGS_minloglevel = google::GLOG_ERROR;
  ceres::Solve(options, problem, z.data(), &summary);
  FLAGS_minloglevel = log_level;
  return objective->decode(z.data());
}

}  // namespace

TrainResult mnn_train(const MnnParams& init, std::span<const Track> tracks, const TrainConfig& config) {
  check_shapes(init);
  if (config.epochs < 0) throw UsageError("epochs must be >= 0");
  if (!(config.lr >= 0.0)) throw UsageError("learning rate must be >= 0");
  if (config.refine_iterations < 0) throw UsageError("refine iterations must be >= 0");
  const auto sequences = training_sequences(tracks, config.window);
  if (sequences.empty()) throw DataError("no usable tracks: every track needs at least 3 points");

  TrainResult result{init, 0.0, 0.0, {}};
  result.initial_sse = mnn_sse(init, sequences);
  result.final_sse = result.initial_sse;
  if (!std::isfinite(result.initial_sse)) throw NumericError("initial MNN loss is not finite");

  std::size_t steps = 0;
  for (const auto& seq : sequences) steps += seq.inputs.size();

  MnnParams params = init;
  auto keep_if_better = [&](double sse) {
    result.epoch_sse.push_back(sse);
    if (sse <= result.final_sse) {
      result.final_sse = sse;
      result.params = params;
    }
  };

  if (config.optimizer == Optimizer::kSgd) {
    std::vector<std::size_t> order(sequences.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(config.seed);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      rng.shuffle(order.begin(), order.end());
      for (auto idx : order) {
        const auto& seq = sequences[idx];
        auto r = mnn_gradients(params, seq.inputs, seq.targets);
        double scale = 1.0 / static_cast<double>(seq.inputs.size());
        if (config.clip_norm > 0.0) {
          double sq = 0.0;
          for (double gi : r.grad.flatten()) sq += gi * gi;
          const double norm = std::sqrt(sq) * scale;
          if (norm > config.clip_norm) scale *= config.clip_norm / norm;
        }
        add_scaled(params, r.grad, -config.lr * scale);
        params.clamp_alphas();
      }
      const double sse = mnn_sse(params, sequences);
      if (!std::isfinite(sse)) break;
      keep_if_better(sse);
    }
  } else {
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    std::vector<double> flat = params.flatten();
    std::vector<double> m(flat.size(), 0.0), v(flat.size(), 0.0);
    double b1 = 1.0, b2 = 1.0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      const auto r = mnn_gradients(params, sequences);
      // The sse comes from the parameters before this update.
      if (epoch > 0) {
        if (!std::isfinite(r.sse)) break;
        keep_if_better(r.sse);
      }
      auto g = r.grad.flatten();
      double scale = 1.0 / static_cast<double>(steps);
      if (config.clip_norm > 0.0) {
        double sq = 0.0;
        for (double gi : g) sq += gi * gi;
        const double norm = std::sqrt(sq) * scale;
        if (norm > config.clip_norm) scale *= config.clip_norm / norm;
      }
      const double lr = config.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / config.epochs));
      b1 *= kBeta1;
      b2 *= kBeta2;
      for (std::size_t k = 0; k < g.size(); ++k) {
        const double gk = g[k] * scale;
        m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * gk;
        v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * gk * gk;
        flat[k] -= lr * (m[k] / (1.0 - b1)) / (std::sqrt(v[k] / (1.0 - b2)) + kEps);
      }
      params.assign(flat);
      params.clamp_alphas();
      flat = params.flatten();
    }
    if (config.epochs > 0) {
      const double sse = mnn_sse(params, sequences);
      if (std::isfinite(sse)) keep_if_better(sse);
    }
  }

  if (config.epochs > 0 && config.refine_iterations > 0) {
    const auto refined = refine(result.params, sequences, config.refine_iterations);
    const double sse = mnn_sse(refined, sequences);
    if (std::isfinite(sse) && sse <= result.final_sse) {
      result.final_sse = sse;
      result.params = refined;
    }
  }
  return result;
}

std::vector<Position> mnn_predict_lookahead(const MnnParams& params, std::span<const Position> history, int m,
                                            Warmup warmup) {
  check_shapes(params);
  if (history.size() < 2) throw UsageError("look-ahead needs at least 2 history points");
  if (m < 1) throw UsageError("look-ahead horizon must be >= 1");
  MnnState s = mnn_reset(params);
  Delta next{};
  for (std::size_t i = 1; i < history.size(); ++i) {
    Delta observed{history[i].x - history[i - 1].x, history[i].y - history[i - 1].y};
    const Delta in = (warmup == Warmup::kTeacherForced || i == 1) ? observed : next;
    next = mnn_step(params, s, in);
  }
  std::vector<Position> out;
  out.reserve(static_cast<std::size_t>(m));
  Position pos = history.back();
  for (int k = 0; k < m; ++k) {
    if (k > 0) next = mnn_step(params, s, next);
    pos = {pos.x + next.dx, pos.y + next.dy};
    out.push_back(pos);
  }
  return out;
}

std::vector<Position> mnn_predict_lookahead(const MnnParams& params, std::span<const TrackPoint> history, int m,
                                            Warmup warmup) {
  std::vector<Position> pts;
  pts.reserve(history.size());
  for (const auto& p : history) pts.push_back({p.x_lat, p.y_lon});
  return mnn_predict_lookahead(params, std::span<const Position>(pts), m, warmup);
}

double one_step_rmse(const MnnParams& params, std::span<const Track> tracks) {
  double total = 0.0;
  int vehicles = 0;
  for (const auto& track : tracks) {
    const auto seq = make_sequence(displacements(track.points));
    if (seq.inputs.empty()) continue;
    // One-step position error equals the displacement error.
    const double sse = mnn_sse(params, std::span(&seq, 1));
    total += std::sqrt(sse / static_cast<double>(seq.inputs.size()));
    ++vehicles;
  }
  if (vehicles == 0) throw DataError("no tracks with at least 3 points");
  return total / vehicles;
}

double rollout_rmse(const MnnParams& params, std::span<const Track> tracks, int history, int horizon) {
  std::vector<std::vector<Position>> predicted, truth;
  for (const auto& track : tracks) {
    if (static_cast<int>(track.points.size()) < history + horizon) continue;
    std::vector<Position> hist, fut;
    for (int i = 0; i < history; ++i) hist.push_back({track.points[i].x_lat, track.points[i].y_lon});
    for (int i = history; i < history + horizon; ++i) fut.push_back({track.points[i].x_lat, track.points[i].y_lon});
    predicted.push_back(mnn_predict_lookahead(params, std::span<const Position>(hist), horizon));
    truth.push_back(std::move(fut));
  }
  if (predicted.empty()) throw DataError("no tracks long enough for the rollout window");
  return mnn_loss(predicted, truth);
}

namespace {

nlohmann::json array_json(std::span<const double> data, std::vector<int> shape) {
  return {{"shape", shape}, {"data", std::vector<double>(data.begin(), data.end())}};
}

template <typename Dest>
void array_from_json(const nlohmann::json& doc, const char* name, std::vector<int> shape, Dest& dest) {
  if (!doc.contains(name)) throw DataError(std::string("MNN checkpoint lacks '") + name + "'");
  const auto& a = doc.at(name);
  if (a.at("shape").get<std::vector<int>>() != shape)
    throw DataError(std::string("MNN checkpoint array '") + name + "' has the wrong shape");
  const auto data = a.at("data").get<std::vector<double>>();
  if (data.size() != dest.size()) throw DataError(std::string("MNN checkpoint array '") + name + "' has wrong size");
  std::copy(data.begin(), data.end(), dest.begin());
}

}  // namespace

nlohmann::json to_json(const MnnParams& p) {
  const int H = p.hidden;
  nlohmann::json arrays = {
      {"w_in", array_json(p.w_in, {kIo, H})},           {"f_in", array_json(p.f_in, {kIo, H})},
      {"alpha_in", array_json(p.alpha_in, {kIo})},      {"w_hid", array_json(p.w_hid, {H, kIo})},
      {"f_hid", array_json(p.f_hid, {H, kIo})},         {"alpha_hid", array_json(p.alpha_hid, {H})},
      {"alpha_out", array_json(p.alpha_out, {kIo})},    {"beta_out", array_json(p.beta_out, {kIo})},
  };
  return {{"format", "dstcan-mnn"}, {"version", kCheckpointVersion}, {"hidden", H}, {"params", arrays}};
}

MnnParams mnn_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "dstcan-mnn") throw DataError("not an MNN checkpoint");
    if (doc.at("version").get<int>() != kCheckpointVersion) throw DataError("unsupported MNN checkpoint version");
    const int H = doc.at("hidden").get<int>();
    if (H < 1) throw DataError("MNN checkpoint hidden width must be >= 1");
    MnnParams p = MnnParams::zeros(H);
    const auto& a = doc.at("params");
    array_from_json(a, "w_in", {kIo, H}, p.w_in);
    array_from_json(a, "f_in", {kIo, H}, p.f_in);
    array_from_json(a, "alpha_in", {kIo}, p.alpha_in);
    array_from_json(a, "w_hid", {H, kIo}, p.w_hid);
    array_from_json(a, "f_hid", {H, kIo}, p.f_hid);
    array_from_json(a, "alpha_hid", {H}, p.alpha_hid);
    array_from_json(a, "alpha_out", {kIo}, p.alpha_out);
    array_from_json(a, "beta_out", {kIo}, p.beta_out);
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed MNN checkpoint: ") + e.what());
  }
}

void save_checkpoint(const MnnParams& params, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << to_json(params).dump(2) << '\n';
  if (!out) throw DataError("failed writing " + path);
}

MnnParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return mnn_from_json(doc);
}

}  // namespace dstcan::mnn
