#pragma once

// Semantic-structure diagnostics over logits: top non-target class
// histograms, per-class consistency and perplexity, logit drift, accuracy.
// Ties always go to the lowest class index.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "companion/error.hpp"
#include "companion/tensor.hpp"

namespace companion {

inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[best]) best = k;
  return best;
}

inline std::size_t top_nontarget_class(std::span<const double> logits, std::size_t y) {
  if (logits.size() < 2) throw InputError("top_nontarget_class: need at least 2 classes");
  if (y >= logits.size()) throw InputError("top_nontarget_class: label out of range");
  std::size_t best = y == 0 ? 1 : 0;
  for (std::size_t k = best + 1; k < logits.size(); ++k)
    if (k != y && logits[k] > logits[best]) best = k;
  return best;
}

// counts(c, k): samples of class c whose top non-target class is k. The
// diagonal never receives counts.
class NonTargetHistogram {
 public:
  explicit NonTargetHistogram(std::size_t num_classes) : k_(num_classes), counts_(num_classes * num_classes, 0), totals_(num_classes, 0) {
    if (num_classes < 2) throw InputError("NonTargetHistogram: need at least 2 classes");
  }

  void add(std::size_t target, std::size_t top_nontarget) {
    if (target >= k_ || top_nontarget >= k_) throw InputError("NonTargetHistogram: class out of range");
    if (target == top_nontarget) throw InputError("NonTargetHistogram: top non-target equals target");
    ++counts_[target * k_ + top_nontarget];
    ++totals_[target];
  }

  void add_logits(std::span<const double> logits, std::size_t target) { add(target, top_nontarget_class(logits, target)); }

  std::size_t num_classes() const noexcept { return k_; }
  std::size_t count(std::size_t c, std::size_t k) const { return counts_.at(c * k_ + k); }
  std::size_t total(std::size_t c) const { return totals_.at(c); }

  bool operator==(const NonTargetHistogram&) const = default;

 private:
  std::size_t k_;
  std::vector<std::size_t> counts_;
  std::vector<std::size_t> totals_;
};

inline NonTargetHistogram nontarget_histogram(const Tensor& logits, std::span<const std::size_t> labels) {
  detail::require_matrix(logits, "nontarget_histogram");
  if (labels.size() != logits.rows()) throw ShapeError("nontarget_histogram: label count does not match rows");
  NonTargetHistogram h(logits.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) h.add_logits(logits.row(i), labels[i]);
  return h;
}

namespace detail {
inline void require_populated(const NonTargetHistogram& h, std::size_t c) {
  if (c >= h.num_classes()) throw InputError("class " + std::to_string(c) + " out of range");
  if (h.total(c) == 0) throw UndefinedClassError("class " + std::to_string(c) + " has no samples");
}
}  // namespace detail

// Share of class c's samples that agree on the most frequent top non-target class.
inline double class_consistency(const NonTargetHistogram& h, std::size_t c) {
  detail::require_populated(h, c);
  std::size_t best = 0;
  for (std::size_t k = 0; k < h.num_classes(); ++k)
    if (k != c) best = std::max(best, h.count(c, k));
  return static_cast<double>(best) / static_cast<double>(h.total(c));
}

// exp of the entropy (nats) of p(k|c), with 0 log 0 = 0.
inline double class_perplexity(const NonTargetHistogram& h, std::size_t c) {
  detail::require_populated(h, c);
  const double n = static_cast<double>(h.total(c));
  double entropy = 0.0;
  for (std::size_t k = 0; k < h.num_classes(); ++k) {
    if (k == c || h.count(c, k) == 0) continue;
    const double p = static_cast<double>(h.count(c, k)) / n;
    entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

// Averages over classes with at least one sample; NaN when none has any.
inline double mean_consistency(const NonTargetHistogram& h) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < h.num_classes(); ++c)
    if (h.total(c) > 0) {
      s += class_consistency(h, c);
      ++n;
    }
  return n ? s / static_cast<double>(n) : std::nan("");
}

inline double mean_perplexity(const NonTargetHistogram& h) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < h.num_classes(); ++c)
    if (h.total(c) > 0) {
      s += class_perplexity(h, c);
      ++n;
    }
  return n ? s / static_cast<double>(n) : std::nan("");
}

// Mean L2 distance between corresponding rows.
inline double logit_variation(const Tensor& prev, const Tensor& curr) {
  detail::require_matrix(prev, "logit_variation");
  detail::require_same_shape(prev, curr, "logit_variation");
  const std::size_t n = prev.rows();
  if (n == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = prev.row(i), b = curr.row(i);
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += (b[k] - a[k]) * (b[k] - a[k]);
    total += std::sqrt(s);
  }
  return total / static_cast<double>(n);
}

inline double accuracy(const Tensor& logits, std::span<const std::size_t> labels) {
  detail::require_matrix(logits, "accuracy");
  if (labels.size() != logits.rows()) throw ShapeError("accuracy: label count does not match rows");
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= logits.cols()) throw InputError("accuracy: label out of range");
    if (argmax(logits.row(i)) == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace companion
