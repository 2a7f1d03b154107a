#pragma once

// Supervised loss and the logit-space distances used as consistency
// regularizers. Every term is averaged over the batch. Distances take
// gradient through `pred` only; `target` is always detached first.

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "companion/error.hpp"
#include "companion/tensor.hpp"

namespace companion {

struct DistanceKind {
  enum class Kind { Mse, Kl, L1, InfoNce };

  Kind kind = Kind::Mse;
  double tau = 0.1;  // InfoNCE temperature

  static DistanceKind mse() { return {Kind::Mse, 0.1}; }
  static DistanceKind kl() { return {Kind::Kl, 0.1}; }
  static DistanceKind l1() { return {Kind::L1, 0.1}; }
  static DistanceKind infonce(double tau = 0.1) {
    if (!(tau > 0.0)) throw InputError("infonce temperature must be > 0");
    return {Kind::InfoNce, tau};
  }

  bool operator==(const DistanceKind&) const = default;
};

inline std::string_view to_string(DistanceKind::Kind k) {
  switch (k) {
    case DistanceKind::Kind::Mse: return "mse";
    case DistanceKind::Kind::Kl: return "kl";
    case DistanceKind::Kind::L1: return "l1";
    case DistanceKind::Kind::InfoNce: return "infonce";
  }
  return "?";
}

inline DistanceKind parse_distance(std::string_view s, double tau = 0.1) {
  if (s == "mse") return DistanceKind::mse();
  if (s == "kl") return DistanceKind::kl();
  if (s == "l1") return DistanceKind::l1();
  if (s == "infonce") return DistanceKind::infonce(tau);
  throw InputError("unknown distance '" + std::string(s) + "' (expected mse|kl|l1|infonce)");
}

inline Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  detail::require_matrix(logits, "cross_entropy");
  if (labels.size() != logits.rows()) throw ShapeError("cross_entropy: label count does not match batch");
  for (auto y : labels)
    if (y >= logits.cols())
      throw InputError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(logits.cols()) + ")");
  return scale(sum(pick(log_softmax(logits), labels)), -1.0 / static_cast<double>(labels.size()));
}

inline Tensor distance(const DistanceKind& kind, const Tensor& pred, const Tensor& target_in) {
  detail::require_matrix(pred, "distance");
  detail::require_same_shape(pred, target_in, "distance");
  const Tensor target = target_in.detached();
  const double b = static_cast<double>(pred.rows());
  const double k = static_cast<double>(pred.cols());

  switch (kind.kind) {
    case DistanceKind::Kind::Mse:
      return scale(sum(square(sub(pred, target))), 0.5 / b);

    case DistanceKind::Kind::L1:
      return scale(sum(abs(sub(pred, target))), 1.0 / (b * k));

    case DistanceKind::Kind::Kl: {
      // KL(softmax(target) || softmax(pred)) = sum p_t (log p_t - log p_s)
      const Tensor log_pt = log_softmax(target);
      Tensor pt = log_pt;
      for (double& v : pt.data()) v = std::exp(v);
      return scale(sum(mul(pt, sub(log_pt, log_softmax(pred)))), 1.0 / b);
    }

    case DistanceKind::Kind::InfoNce: {
      if (!(kind.tau > 0.0)) throw InputError("infonce temperature must be > 0");
      // Row i's positive is target row i; every other target row is a negative.
      const Tensor t_hat_T = transpose(normalize_rows(target));
      const Tensor sim = scale(matmul(normalize_rows(pred), t_hat_T), 1.0 / kind.tau);
      std::vector<std::size_t> diag(pred.rows());
      for (std::size_t i = 0; i < diag.size(); ++i) diag[i] = i;
      return scale(sum(pick(detail::log_softmax_rows(sim), diag)), -1.0 / b);
    }
  }
  throw InputError("unknown distance kind");
}

}  // namespace companion
