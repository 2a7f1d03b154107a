#pragma once

// Deep companion prototypes: the companion network is replaced by one
// logit-space prototype per class, kept as an EMA of batch class means.
// The deployed net is pulled toward the prototype of each sample's label.

#include <cstring>
#include <fstream>
#include <span>
#include <vector>

#include "companion/engine.hpp"

namespace companion {

class PrototypeBank {
 public:
  PrototypeBank() = default;
  explicit PrototypeBank(std::size_t num_classes)
      : k_(num_classes), values_(num_classes * num_classes, 0.0), initialized_(num_classes, false) {}

  std::size_t num_classes() const noexcept { return k_; }
  bool initialized(std::size_t c) const { return initialized_.at(c); }
  std::span<const double> prototype(std::size_t c) const { return std::span<const double>(values_).subspan(c * k_, k_); }
  std::span<double> prototype(std::size_t c) { return std::span<double>(values_).subspan(c * k_, k_); }
  void mark_initialized(std::size_t c) { initialized_.at(c) = true; }
  bool empty() const { return std::none_of(initialized_.begin(), initialized_.end(), [](bool b) { return b; }); }

  bool bit_equal(const PrototypeBank& o) const {
    return k_ == o.k_ && initialized_ == o.initialized_ &&
           std::memcmp(values_.data(), o.values_.data(), values_.size() * sizeof(double)) == 0;
  }

 private:
  std::size_t k_ = 0;
  std::vector<double> values_;
  std::vector<bool> initialized_;
};

// Mean over samples whose class prototype exists of 1/2 |f(theta, x) - p^y|^2.
// Constant zero when no sample in the batch has one.
inline Tensor dcp_regularizer(const Tensor& logits, std::span<const std::size_t> labels, const PrototypeBank& bank) {
  detail::require_matrix(logits, "dcp_regularizer");
  const std::size_t b = logits.rows(), K = logits.cols();
  if (labels.size() != b) throw ShapeError("dcp_regularizer: label count does not match batch");
  if (bank.num_classes() != K) throw ShapeError("dcp_regularizer: bank size does not match logits");

  Tensor target = Tensor::zeros({b, K});
  Tensor mask = Tensor::zeros({b, K});
  std::size_t used = 0;
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= K) throw InputError("dcp_regularizer: label out of range");
    if (!bank.initialized(labels[i])) continue;
    const auto p = bank.prototype(labels[i]);
    for (std::size_t k = 0; k < K; ++k) {
      target(i, k) = p[k];
      mask(i, k) = 1.0;
    }
    ++used;
  }
  if (used == 0) return Tensor::scalar(0.0);
  return scale(sum(square(mul(sub(logits, target), mask))), 0.5 / static_cast<double>(used));
}

// Class means are taken over the whole batch before any prototype moves.
inline void update_prototypes(PrototypeBank& bank, const Tensor& logits, std::span<const std::size_t> labels, double alpha) {
  detail::require_matrix(logits, "update_prototypes");
  const std::size_t K = bank.num_classes();
  if (logits.cols() != K || labels.size() != logits.rows()) throw ShapeError("update_prototypes: shape mismatch");

  std::vector<double> sums(K * K, 0.0);
  std::vector<std::size_t> counts(K, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t c = labels[i];
    if (c >= K) throw InputError("update_prototypes: label out of range");
    ++counts[c];
    for (std::size_t k = 0; k < K; ++k) sums[c * K + k] += logits(i, k);
  }
  for (std::size_t c = 0; c < K; ++c) {
    if (counts[c] == 0) continue;
    auto p = bank.prototype(c);
    const double n = static_cast<double>(counts[c]);
    if (bank.initialized(c)) {
      for (std::size_t k = 0; k < K; ++k) p[k] = alpha * p[k] + (1.0 - alpha) * (sums[c * K + k] / n);
    } else {
      for (std::size_t k = 0; k < K; ++k) p[k] = sums[c * K + k] / n;
      bank.mark_initialized(c);
    }
  }
}

struct DcpState {
  TrainerState trainer;
  PrototypeBank bank;
};

inline StepStats dcp_step(DcpState& state, const Tensor& x, std::span<const std::size_t> y, const DclConfig& cfg,
                          std::uint64_t total_steps) {
  if (y.empty() || x.rows() != y.size()) throw InputError("dcp_step: empty or inconsistent batch");
  TrainerState& ts = state.trainer;
  const double eta = lr_at(cfg.lr_schedule, cfg.eta_theta, ts.step, total_steps);
  StepStats stats;
  Tensor logits_t;
  {
    Tape tape;
    TapeScope scope(tape);
    const ParamSet w = watch_params(tape, ts.theta);
    const Tensor logits = forward(w, x);
    logits_t = logits.detached();
    const Tensor ce = cross_entropy(logits, y);
    Tensor objective = ce;
    if (cfg.lambda != 0.0) {
      const Tensor reg = dcp_regularizer(logits, y, state.bank);
      if (reg.tracked()) objective = add(ce, scale(reg, cfg.lambda));
    }
    stats.ce_loss = ce.item();
    stats.objective = objective.item();
    detail::require_finite(stats.objective, ts.step, "deployed objective");
    const Gradients g = backward(tape, objective);
    SgdMomentum{cfg.momentum, cfg.weight_decay}.apply(ts.theta, ts.theta_velocity, w, g, eta);
  }
  update_prototypes(state.bank, logits_t, y, alpha_at(cfg, ts.step));
  ++ts.step;
  return stats;
}

struct DcpResult {
  TrainResult result;
  PrototypeBank bank;
};

inline DcpResult dcp_train(const DclConfig& cfg, const DatasetSplit& train, const DatasetSplit& test) {
  cfg.validate();
  detail::require_compatible(train, test);
  const MlpSpec spec = cfg.deployed_spec(train.input_dim(), train.num_classes);
  DcpState state{TrainerState::initial(spec, spec, cfg.seed), PrototypeBank(train.num_classes)};
  TrainResult r = detail::run_epochs(
      cfg, train, test, state.trainer,
      [&](TrainerState&, const Tensor& x, std::span<const std::size_t> y, std::uint64_t total) {
        return dcp_step(state, x, y, cfg, total);
      },
      [](const TrainerState&) {});
  return {std::move(r), std::move(state.bank)};
}

// Bank checkpoint: per class, K little-endian float64 followed by one
// initialized-flag byte (0 or 1). K is recovered from the file size.
inline void write_bank(std::ostream& os, const PrototypeBank& bank) {
  for (std::size_t c = 0; c < bank.num_classes(); ++c) {
    for (double v : bank.prototype(c)) detail::put_le(os, v);
    os.put(bank.initialized(c) ? '\1' : '\0');
  }
}

inline PrototypeBank read_bank(std::istream& is) {
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  std::size_t K = 0;
  while (K * (8 * K + 1) < raw.size()) ++K;
  if (K * (8 * K + 1) != raw.size() || K < 2) throw FormatError("bank: size does not match K rows of K float64 + flag");
  PrototypeBank bank(K);
  const unsigned char* p = raw.data();
  for (std::size_t c = 0; c < K; ++c) {
    auto proto = bank.prototype(c);
    for (std::size_t k = 0; k < K; ++k, p += 8) proto[k] = detail::get_le(p);
    if (*p > 1) throw FormatError("bank: flag byte must be 0 or 1");
    if (*p == 1) bank.mark_initialized(c);
    ++p;
  }
  return bank;
}

inline void save_bank(const std::string& path, const PrototypeBank& bank) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_bank(os, bank);
  if (!os) throw IoError("write failed: " + path);
}

inline PrototypeBank load_bank(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_bank(is);
}

}  // namespace companion
