#pragma once

// Deep companion learning: the deployed network theta is trained on
// cross-entropy plus a logit-space consistency term toward a companion network
// omega; omega in turn regresses onto a blend of its own and theta's logits,
// which makes it track the running mean of theta's historical predictions.
//
// All right-hand sides within one step use the pre-step parameters
// (theta_t, omega_t), so the two updates are order-independent.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "companion/data.hpp"
#include "companion/error.hpp"
#include "companion/metrics.hpp"
#include "companion/model.hpp"
#include "companion/objectives.hpp"
#include "companion/tensor.hpp"

namespace companion {

enum class LrSchedule { Constant, Cosine };
enum class AlphaMode { Fixed, Harmonic };

struct DclConfig {
  double alpha = 0.6;
  AlphaMode alpha_mode = AlphaMode::Fixed;
  double lambda = 1.0;
  double eta_theta = 0.1;
  std::optional<double> eta_omega;  // unset: same as eta_theta
  LrSchedule lr_schedule = LrSchedule::Cosine;
  double momentum = 0.9;
  double weight_decay = 0.0;
  DistanceKind distance = DistanceKind::mse();
  double companion_fraction = 1.0;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden_dims{64, 64};
  std::optional<std::vector<std::size_t>> companion_hidden_dims;  // unset: mirror the deployed net
  bool record_wall_clock = false;

  double omega_lr() const { return eta_omega.value_or(eta_theta); }

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("alpha must be in [0, 1]");
    if (!(lambda >= 0.0)) throw InputError("lambda must be >= 0");
    if (!(eta_theta >= 0.0)) throw InputError("eta_theta must be >= 0");
    if (!(omega_lr() >= 0.0)) throw InputError("eta_omega must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InputError("momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw InputError("weight_decay must be >= 0");
    if (!(companion_fraction > 0.0 && companion_fraction <= 1.0)) throw InputError("companion_fraction must be in (0, 1]");
    if (batch_size < 1) throw InputError("batch_size must be >= 1");
    if (distance.kind == DistanceKind::Kind::InfoNce && !(distance.tau > 0.0)) throw InputError("infonce tau must be > 0");
  }

  MlpSpec deployed_spec(std::size_t input_dim, std::size_t num_classes) const {
    return MlpSpec{input_dim, hidden_dims, num_classes};
  }
  MlpSpec companion_spec(std::size_t input_dim, std::size_t num_classes) const {
    return MlpSpec{input_dim, companion_hidden_dims.value_or(hidden_dims), num_classes};
  }
};

inline double lr_at(LrSchedule schedule, double initial_eta, std::uint64_t t, std::uint64_t total_steps) {
  if (schedule == LrSchedule::Constant || total_steps == 0) return initial_eta;
  if (t >= total_steps) return 0.0;
  const double frac = static_cast<double>(t) / static_cast<double>(total_steps);
  return initial_eta * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

// Companion blend weight for 0-based step t. Harmonic mode is (s-1)/s with
// s = t + 1, so the first step copies theta's logits outright.
inline double alpha_at(const DclConfig& cfg, std::uint64_t t) {
  if (cfg.alpha_mode == AlphaMode::Fixed) return cfg.alpha;
  const double s = static_cast<double>(t + 1);
  return (s - 1.0) / s;
}

// alpha * omega + (1 - alpha) * theta, detached.
inline Tensor companion_target(double alpha, const Tensor& omega_logits, const Tensor& theta_logits) {
  detail::require_same_shape(omega_logits, theta_logits, "companion_target");
  Tensor z = Tensor::zeros(omega_logits.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = alpha * omega_logits[i] + (1.0 - alpha) * theta_logits[i];
  return z;
}

// ---------------------------------------------------------------------------
// Optimizer

// Heavy-ball SGD: v <- mu v + (g + wd theta); theta <- theta - eta v.
struct SgdMomentum {
  double momentum = 0.9;
  double weight_decay = 0.0;

  void apply(ParamSet& params, ParamSet& velocity, const ParamSet& watched, const Gradients& grads, double eta) const {
    const std::size_t L = params.weights.size();
    for (std::size_t l = 0; l < L; ++l) {
      update(params.weights[l], velocity.weights[l], grads.wrt(watched.weights[l]), eta);
      update(params.biases[l], velocity.biases[l], grads.wrt(watched.biases[l]), eta);
    }
  }

 private:
  void update(Tensor& p, Tensor& v, const Tensor& g, double eta) const {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = weight_decay != 0.0 ? g[i] + weight_decay * p[i] : g[i];
      v[i] = momentum * v[i] + gi;
      p[i] -= eta * v[i];
    }
  }
};

inline ParamSet zeros_like(const ParamSet& p) {
  ParamSet z;
  z.spec = p.spec;
  for (const auto& w : p.weights) z.weights.push_back(Tensor::zeros(w.shape()));
  for (const auto& b : p.biases) z.biases.push_back(Tensor::zeros(b.shape()));
  return z;
}

// ---------------------------------------------------------------------------
// Trainer state and single steps

struct TrainerState {
  ParamSet theta;
  ParamSet omega;
  ParamSet theta_velocity;
  ParamSet omega_velocity;
  std::uint64_t step = 0;

  // theta and omega start bit-identical when their architectures match;
  // a different companion architecture gets its own init stream.
  static TrainerState initial(const MlpSpec& deployed, const MlpSpec& companion, std::uint64_t seed) {
    TrainerState s;
    s.theta = init_params(deployed, seed, "init");
    s.omega = companion == deployed ? clone_params(s.theta) : init_params(companion, seed, "init/companion");
    s.theta_velocity = zeros_like(s.theta);
    s.omega_velocity = zeros_like(s.omega);
    return s;
  }
};

struct StepStats {
  double ce_loss = 0.0;
  double objective = 0.0;    // CE + lambda * regularizer for theta
  double companion_loss = 0.0;
};

namespace detail {

inline void require_finite(double v, std::uint64_t step, const char* what) {
  if (!std::isfinite(v)) throw TrainingFault(step, std::string(what) + " is not finite");
}

inline std::size_t companion_rows(double fraction, std::size_t b) {
  const auto m = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(b)));
  return std::clamp<std::size_t>(m, 1, b);
}

}  // namespace detail

// Plain SGD on cross-entropy; the baseline every method reduces to.
inline StepStats ce_step(TrainerState& state, const Tensor& x, std::span<const std::size_t> y, const DclConfig& cfg,
                         std::uint64_t total_steps) {
  if (y.empty()) throw InputError("ce_step: empty batch");
  const double eta = lr_at(cfg.lr_schedule, cfg.eta_theta, state.step, total_steps);
  Tape tape;
  TapeScope scope(tape);
  const ParamSet w = watch_params(tape, state.theta);
  const Tensor loss = cross_entropy(forward(w, x), y);
  detail::require_finite(loss.item(), state.step, "cross-entropy");
  const Gradients g = backward(tape, loss);
  SgdMomentum{cfg.momentum, cfg.weight_decay}.apply(state.theta, state.theta_velocity, w, g, eta);
  ++state.step;
  return {loss.item(), loss.item(), 0.0};
}

inline StepStats dcl_step(TrainerState& state, const Tensor& x, std::span<const std::size_t> y, const DclConfig& cfg,
                          std::uint64_t total_steps) {
  if (y.empty() || x.rows() != y.size()) throw InputError("dcl_step: empty or inconsistent batch");
  const std::uint64_t t = state.step;
  const double eta_theta = lr_at(cfg.lr_schedule, cfg.eta_theta, t, total_steps);
  const double eta_omega = lr_at(cfg.lr_schedule, cfg.omega_lr(), t, total_steps);
  const bool regularize = cfg.lambda != 0.0;
  StepStats stats;

  // omega_t on the full batch, only needed by the theta regularizer.
  std::optional<Tensor> omega_logits;
  if (regularize) omega_logits = forward(state.omega, x);

  // theta update: CE + lambda * Delta(f(theta, x), f(omega_t, x))
  Tensor theta_logits_t;
  {
    Tape tape;
    TapeScope scope(tape);
    const ParamSet w = watch_params(tape, state.theta);
    const Tensor logits = forward(w, x);
    theta_logits_t = logits.detached();
    const Tensor ce = cross_entropy(logits, y);
    Tensor objective = ce;
    if (regularize) objective = add(ce, scale(distance(cfg.distance, logits, *omega_logits), cfg.lambda));
    stats.ce_loss = ce.item();
    stats.objective = objective.item();
    detail::require_finite(stats.objective, t, "deployed objective");
    const Gradients g = backward(tape, objective);
    SgdMomentum{cfg.momentum, cfg.weight_decay}.apply(state.theta, state.theta_velocity, w, g, eta_theta);
  }

  // omega update on the first ceil(f * b) rows:
  // Delta(f(omega, x'), alpha f(omega_t, x') + (1 - alpha) f(theta_t, x'))
  {
    const std::size_t m = detail::companion_rows(cfg.companion_fraction, x.rows());
    const Tensor xs = m == x.rows() ? x : slice_rows(x, 0, m);
    const Tensor theta_sub = m == x.rows() ? theta_logits_t : slice_rows(theta_logits_t, 0, m);
    Tape tape;
    TapeScope scope(tape);
    const ParamSet w = watch_params(tape, state.omega);
    const Tensor out = forward(w, xs);  // evaluated at omega_t
    const Tensor target = companion_target(alpha_at(cfg, t), out.detached(), theta_sub);
    const Tensor loss = distance(cfg.distance, out, target);
    stats.companion_loss = loss.item();
    detail::require_finite(stats.companion_loss, t, "companion objective");
    const Gradients g = backward(tape, loss);
    SgdMomentum{cfg.momentum, cfg.weight_decay}.apply(state.omega, state.omega_velocity, w, g, eta_omega);
  }

  ++state.step;
  return stats;
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  NonTargetHistogram histogram{2};
  double mean_consistency = 0.0;
  double mean_perplexity = 0.0;
  double logit_variation = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  ParamSet theta;
  std::optional<ParamSet> omega;
  std::vector<EpochLog> logs;
  double init_train_acc = 0.0;
  double init_test_acc = 0.0;
  std::uint64_t steps = 0;
};

namespace detail {

inline void require_compatible(const DatasetSplit& train, const DatasetSplit& test) {
  train.validate();
  test.validate();
  if (train.input_dim() != test.input_dim()) throw InputError("train/test input_dim differ");
  if (test.num_classes > train.num_classes) throw InputError("test split has more classes than train split");
}

// Drives `step(state, x, y, total_steps)` over seeded epochs and logs
// evaluation metrics on both splits after each epoch.
template <class Step, class AfterEpoch>
TrainResult run_epochs(const DclConfig& cfg, const DatasetSplit& train, const DatasetSplit& test, TrainerState& state,
                       Step&& step, AfterEpoch&& after_epoch) {
  using clock = std::chrono::steady_clock;
  const std::size_t n = train.size();
  const std::uint64_t total_steps = cfg.epochs * batches_per_epoch(n, cfg.batch_size);

  TrainResult r;
  Tensor prev_test_logits = forward(state.theta, test.features);
  r.init_train_acc = accuracy(forward(state.theta, train.features), train.labels);
  r.init_test_acc = accuracy(prev_test_logits, test.labels);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = clock::now();
    double loss_sum = 0.0;
    const auto batches = epoch_batches(n, cfg.batch_size, cfg.seed, epoch);
    for (const auto& idx : batches) {
      auto [x, y] = gather(train, idx);
      loss_sum += step(state, x, std::span<const std::size_t>(y), total_steps).ce_loss;
    }
    after_epoch(state);

    EpochLog log;
    log.epoch = epoch + 1;
    log.train_loss = loss_sum / static_cast<double>(batches.size());
    log.train_acc = accuracy(forward(state.theta, train.features), train.labels);
    Tensor test_logits = forward(state.theta, test.features);
    log.test_acc = accuracy(test_logits, test.labels);
    log.histogram = nontarget_histogram(test_logits, test.labels);
    log.mean_consistency = mean_consistency(log.histogram);
    log.mean_perplexity = mean_perplexity(log.histogram);
    log.logit_variation = logit_variation(prev_test_logits, test_logits);
    prev_test_logits = std::move(test_logits);
    if (cfg.record_wall_clock) log.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    r.logs.push_back(std::move(log));
  }
  r.steps = state.step;
  r.theta = clone_params(state.theta);
  return r;
}

}  // namespace detail

inline TrainResult train_ce(const DclConfig& cfg, const DatasetSplit& train, const DatasetSplit& test) {
  cfg.validate();
  detail::require_compatible(train, test);
  const MlpSpec spec = cfg.deployed_spec(train.input_dim(), train.num_classes);
  TrainerState state = TrainerState::initial(spec, spec, cfg.seed);
  return detail::run_epochs(
      cfg, train, test, state,
      [&](TrainerState& s, const Tensor& x, std::span<const std::size_t> y, std::uint64_t total) { return ce_step(s, x, y, cfg, total); },
      [](const TrainerState&) {});
}

inline TrainResult train(const DclConfig& cfg, const DatasetSplit& train_split, const DatasetSplit& test) {
  cfg.validate();
  detail::require_compatible(train_split, test);
  const std::size_t d = train_split.input_dim(), k = train_split.num_classes;
  TrainerState state = TrainerState::initial(cfg.deployed_spec(d, k), cfg.companion_spec(d, k), cfg.seed);
  TrainResult r = detail::run_epochs(
      cfg, train_split, test, state,
      [&](TrainerState& s, const Tensor& x, std::span<const std::size_t> y, std::uint64_t total) { return dcl_step(s, x, y, cfg, total); },
      [](const TrainerState&) {});
  r.omega = clone_params(state.omega);
  return r;
}

// ---------------------------------------------------------------------------
// Oracles for the companion recursion

struct TabularCompanion {
  Tensor recursive;     // table after applying the harmonic-alpha recursion
  Tensor direct_mean;   // (1/t) sum_i history[i]
};

// An idealized companion storing one free logit vector per sample. At step
// s (1-based) it sets its table to the exact minimizer of
// 1/2 |z - ((s-1)/s * table + 1/s * history[s])|^2.
inline TabularCompanion tabular_companion_oracle(std::span<const Tensor> history) {
  if (history.empty()) throw InputError("tabular_companion_oracle: empty history");
  const Shape& shape = history.front().shape();
  Tensor table = history.front().detached();
  Tensor sum = history.front().detached();
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i].shape() != shape) throw ShapeError("tabular_companion_oracle: ragged history");
    const double s = static_cast<double>(i + 1);
    table = companion_target((s - 1.0) / s, table, history[i]);
    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += history[i][j];
  }
  for (double& v : sum.data()) v /= static_cast<double>(history.size());
  return {std::move(table), std::move(sum)};
}

struct OrthogonalityTerms {
  double lhs = 0.0;  // (1/t) sum_i |h_i - c|^2
  double rhs = 0.0;  // |c - mean|^2 + Var
};

inline OrthogonalityTerms orthogonality_check(std::span<const Tensor> history, const Tensor& candidate) {
  if (history.empty()) throw InputError("orthogonality_check: empty history");
  const double t = static_cast<double>(history.size());
  for (const auto& h : history) detail::require_same_shape(h, candidate, "orthogonality_check");

  OrthogonalityTerms out;
  for (const auto& h : history)
    for (std::size_t j = 0; j < h.size(); ++j) out.lhs += (h[j] - candidate[j]) * (h[j] - candidate[j]);
  out.lhs /= t;

  std::vector<double> mu(candidate.size(), 0.0);
  for (const auto& h : history)
    for (std::size_t j = 0; j < h.size(); ++j) mu[j] += h[j];
  for (double& v : mu) v /= t;

  double bias = 0.0, var = 0.0;
  for (std::size_t j = 0; j < mu.size(); ++j) bias += (candidate[j] - mu[j]) * (candidate[j] - mu[j]);
  for (const auto& h : history)
    for (std::size_t j = 0; j < h.size(); ++j) var += (h[j] - mu[j]) * (h[j] - mu[j]);
  out.rhs = bias + var / t;
  return out;
}

}  // namespace companion
