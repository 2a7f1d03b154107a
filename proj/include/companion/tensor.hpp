#pragma once

// Dense float64 tensors with a small reverse-mode autodiff tape.
//
// A Tape records primitive operations while it is the active tape of the
// current thread (see TapeScope). Tensors that were registered with
// Tape::watch, or produced by a recorded op, carry a node id. Ops whose inputs
// carry no node id are evaluated eagerly and not recorded, so the same forward
// code serves both training and plain evaluation, bit for bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "companion/error.hpp"

namespace companion {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

class Tensor {
 public:
  Tensor() : shape_{}, data_(1, 0.0) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) {
    const auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<double> d;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != cols) throw ShapeError("ragged matrix literal");
      d.insert(d.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(d));
  }

  static Tensor vector(std::vector<double> data) {
    const auto n = data.size();
    return Tensor({n}, std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }
  std::size_t dim(std::size_t i) const {
    if (i >= shape_.size()) throw ShapeError("dimension " + std::to_string(i) + " of " + shape_str(shape_));
    return shape_[i];
  }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

  double item() const {
    if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * shape_[1], shape_[1]);
  }

  const std::optional<NodeId>& node() const noexcept { return node_; }
  bool tracked() const noexcept { return node_.has_value(); }

  // Copy of the values with no tape identity; gradients never flow through it.
  Tensor detached() const { return Tensor(shape_, data_); }

  bool same_values(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  friend class Tape;
  Shape shape_;
  std::vector<double> data_;
  std::optional<NodeId> node_;
};

// Per-input gradient accumulators handed to a backward closure; null for
// inputs that are constants on this tape.
using GradSinks = std::span<std::vector<double>* const>;
using BackwardFn = std::function<void(std::span<const double> grad_out, GradSinks grads_in)>;

class Tape {
 public:
  struct Record {
    std::string op;
    std::vector<NodeId> inputs;
    NodeId output;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers t as a leaf on this tape and returns it tagged with its node id.
  Tensor watch(Tensor t) {
    t.node_ = new_node(t.shape(), true);
    return t;
  }

  // Records an op producing `out` from `inputs`. Untracked inputs are constants.
  Tensor record(std::string op, std::initializer_list<const Tensor*> inputs, Tensor out, BackwardFn backward) {
    Record rec;
    rec.op = std::move(op);
    for (const Tensor* in : inputs) rec.inputs.push_back(in->node_ ? *in->node_ : kConstant);
    rec.output = new_node(out.shape(), false);
    rec.backward = std::move(backward);
    out.node_ = rec.output;
    records_.push_back(std::move(rec));
    return out;
  }

  std::size_t num_nodes() const noexcept { return shapes_.size(); }
  const std::vector<Record>& records() const noexcept { return records_; }
  bool is_leaf(NodeId id) const { return leaf_.at(id); }
  const Shape& node_shape(NodeId id) const { return shapes_.at(id); }

  static constexpr NodeId kConstant = static_cast<NodeId>(-1);

  static Tape*& active() noexcept {
    thread_local Tape* current = nullptr;
    return current;
  }

 private:
  NodeId new_node(const Shape& s, bool leaf) {
    shapes_.push_back(s);
    leaf_.push_back(leaf);
    return shapes_.size() - 1;
  }

  std::vector<Shape> shapes_;
  std::vector<bool> leaf_;
  std::vector<Record> records_;
};

// Makes a tape the active one for the current thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) noexcept : previous_(Tape::active()) { Tape::active() = &tape; }
  ~TapeScope() { Tape::active() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Leaf gradients produced by backward().
class Gradients {
 public:
  Gradients(const Tape& tape, std::vector<std::vector<double>> grads) : tape_(&tape), grads_(std::move(grads)) {}

  bool contains(NodeId id) const { return id < grads_.size() && !grads_[id].empty(); }

  // Gradient w.r.t. a watched tensor; zeros when the output does not depend on it.
  Tensor wrt(const Tensor& leaf) const {
    if (!leaf.node()) throw ContractError("wrt() on an untracked tensor");
    const NodeId id = *leaf.node();
    if (contains(id)) return Tensor(tape_->node_shape(id), grads_[id]);
    return Tensor::zeros(tape_->node_shape(id));
  }

  // Leaf node ids that received a gradient.
  std::vector<NodeId> leaves() const {
    std::vector<NodeId> out;
    for (NodeId i = 0; i < grads_.size(); ++i)
      if (contains(i) && tape_->is_leaf(i)) out.push_back(i);
    return out;
  }

 private:
  const Tape* tape_;
  std::vector<std::vector<double>> grads_;
};

inline Gradients backward(const Tape& tape, const Tensor& output) {
  if (output.size() != 1) throw ContractError("backward() needs a scalar output, got " + shape_str(output.shape()));
  if (!output.node() || *output.node() >= tape.num_nodes())
    throw ContractError("backward() output is not recorded on this tape");

  std::vector<std::vector<double>> grads(tape.num_nodes());
  grads[*output.node()] = {1.0};

  const auto& recs = tape.records();
  std::vector<std::vector<double>*> sinks;
  for (auto it = recs.rbegin(); it != recs.rend(); ++it) {
    if (grads[it->output].empty()) continue;
    sinks.clear();
    for (NodeId in : it->inputs) {
      if (in == Tape::kConstant) {
        sinks.push_back(nullptr);
        continue;
      }
      if (grads[in].empty()) grads[in].assign(shape_size(tape.node_shape(in)), 0.0);
      sinks.push_back(&grads[in]);
    }
    it->backward(grads[it->output], sinks);
  }
  return Gradients(tape, std::move(grads));
}

namespace detail {

inline bool any_tracked(std::initializer_list<const Tensor*> ts) {
  return Tape::active() && std::any_of(ts.begin(), ts.end(), [](const Tensor* t) { return t->tracked(); });
}

// Records `out` when a tape is active and some input is tracked; returns it untouched otherwise.
inline Tensor finish(const char* op, std::initializer_list<const Tensor*> inputs, Tensor out, BackwardFn bw) {
  if (!any_tracked(inputs)) return out;
  return Tape::active()->record(op, inputs, std::move(out), std::move(bw));
}

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive ops

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw ShapeError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * B[p * n + j];
    }
  return detail::finish("matmul", {&a, &b}, Tensor({m, n}, std::move(out)),
                        [av = a.values(), bv = b.values(), m, k, n](std::span<const double> g, GradSinks gin) {
                          if (auto* ga = gin[0])  // dA = G B^T
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t p = 0; p < k; ++p) {
                                double s = 0.0;
                                for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
                                (*ga)[i * k + p] += s;
                              }
                          if (auto* gb = gin[1])  // dB = A^T G
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t p = 0; p < k; ++p) {
                                const double aip = av[i * k + p];
                                for (std::size_t j = 0; j < n; ++j) (*gb)[p * n + j] += aip * g[i * n + j];
                              }
                        });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a(i, j);
  return detail::finish("transpose", {&a}, Tensor({n, m}, std::move(out)), [m, n](std::span<const double> g, GradSinks gin) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) (*gin[0])[i * n + j] += g[j * m + i];
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::finish("add", {&a, &b}, Tensor(a.shape(), std::move(out)), [](std::span<const double> g, GradSinks gin) {
    for (auto* s : gin)
      if (s)
        for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::finish("sub", {&a, &b}, Tensor(a.shape(), std::move(out)), [](std::span<const double> g, GradSinks gin) {
    if (auto* ga = gin[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (auto* gb = gin[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::finish("mul", {&a, &b}, Tensor(a.shape(), std::move(out)),
                        [av = a.values(), bv = b.values()](std::span<const double> g, GradSinks gin) {
                          if (auto* ga = gin[0])
                            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
                          if (auto* gb = gin[1])
                            for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
                        });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return detail::finish("scale", {&a}, Tensor(a.shape(), std::move(out)), [s](std::span<const double> g, GradSinks gin) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * s;
  });
}

// a[m x n] + bias[n] broadcast over rows.
inline Tensor add_rowwise(const Tensor& a, const Tensor& bias) {
  detail::require_matrix(a, "add_rowwise");
  const std::size_t m = a.rows(), n = a.cols();
  if (bias.rank() != 1 || bias.size() != n)
    throw ShapeError("add_rowwise: bias " + shape_str(bias.shape()) + " does not fit " + shape_str(a.shape()));
  std::vector<double> out(a.values());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias[j];
  return detail::finish("add_rowwise", {&a, &bias}, Tensor(a.shape(), std::move(out)),
                        [m, n](std::span<const double> g, GradSinks gin) {
                          if (auto* ga = gin[0])
                            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                          if (auto* gb = gin[1])
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) (*gb)[j] += g[i * n + j];
                        });
}

// Subgradient at exactly 0 is 0.
inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  return detail::finish("relu", {&a}, Tensor(a.shape(), std::move(out)), [av = a.values()](std::span<const double> g, GradSinks gin) {
    for (std::size_t i = 0; i < g.size(); ++i)
      if (av[i] > 0.0) (*gin[0])[i] += g[i];
  });
}

// Subgradient at exactly 0 is 0.
inline Tensor abs(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(a[i]);
  return detail::finish("abs", {&a}, Tensor(a.shape(), std::move(out)), [av = a.values()](std::span<const double> g, GradSinks gin) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] > 0.0) (*gin[0])[i] += g[i];
      else if (av[i] < 0.0) (*gin[0])[i] -= g[i];
    }
  });
}

inline Tensor square(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * a[i];
  return detail::finish("square", {&a}, Tensor(a.shape(), std::move(out)), [av = a.values()](std::span<const double> g, GradSinks gin) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += 2.0 * av[i] * g[i];
  });
}

namespace detail {

// Row-wise x - logsumexp(x), stabilized by the row max. Accepts single-column input.
inline Tensor log_softmax_rows(const Tensor& a) {
  require_matrix(a, "log_softmax");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const auto r = a.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double v : r) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = r[j] - lse;
  }
  std::vector<double> saved = out;
  return finish("log_softmax", {&a}, Tensor({m, n}, std::move(out)),
                        [y = std::move(saved), m, n](std::span<const double> g, GradSinks gin) {
                          // dx_j = g_j - softmax_j * sum_k g_k
                          for (std::size_t i = 0; i < m; ++i) {
                            double gs = 0.0;
                            for (std::size_t j = 0; j < n; ++j) gs += g[i * n + j];
                            for (std::size_t j = 0; j < n; ++j)
                              (*gin[0])[i * n + j] += g[i * n + j] - std::exp(y[i * n + j]) * gs;
                          }
                        });
}

}  // namespace detail

inline Tensor log_softmax(const Tensor& a) {
  detail::require_matrix(a, "log_softmax");
  if (a.cols() < 2) throw ShapeError("log_softmax: needs at least 2 classes, got " + shape_str(a.shape()));
  return detail::log_softmax_rows(a);
}

inline Tensor softmax_values(const Tensor& a) {
  Tensor ls = log_softmax(a.detached());
  for (double& v : ls.data()) v = std::exp(v);
  return ls;
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::finish("sum", {&a}, Tensor::scalar(s), [](std::span<const double> g, GradSinks gin) {
    for (double& v : *gin[0]) v += g[0];
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

// out[i] = a[i, index[i]]
inline Tensor pick(const Tensor& a, std::span<const std::size_t> index) {
  detail::require_matrix(a, "pick");
  const std::size_t m = a.rows(), n = a.cols();
  if (index.size() != m) throw ShapeError("pick: " + std::to_string(index.size()) + " indices for " + shape_str(a.shape()));
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (index[i] >= n) throw InputError("pick: index " + std::to_string(index[i]) + " out of range for " + std::to_string(n) + " columns");
    out[i] = a(i, index[i]);
  }
  return detail::finish("pick", {&a}, Tensor({m}, std::move(out)),
                        [idx = std::vector<std::size_t>(index.begin(), index.end()), n](std::span<const double> g, GradSinks gin) {
                          for (std::size_t i = 0; i < idx.size(); ++i) (*gin[0])[i * n + idx[i]] += g[i];
                        });
}

// Each row scaled to unit L2 norm.
inline Tensor normalize_rows(const Tensor& a) {
  detail::require_matrix(a, "normalize_rows");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n), norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (double v : a.row(i)) s += v * v;
    norms[i] = std::sqrt(s);
    if (norms[i] == 0.0) throw InputError("normalize_rows: row " + std::to_string(i) + " has zero norm");
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a(i, j) / norms[i];
  }
  std::vector<double> saved = out;
  return detail::finish("normalize_rows", {&a}, Tensor({m, n}, std::move(out)),
                        [y = std::move(saved), norms = std::move(norms), m, n](std::span<const double> g, GradSinks gin) {
                          // dx = (g - y (y.g)) / |x|
                          for (std::size_t i = 0; i < m; ++i) {
                            double yg = 0.0;
                            for (std::size_t j = 0; j < n; ++j) yg += y[i * n + j] * g[i * n + j];
                            for (std::size_t j = 0; j < n; ++j)
                              (*gin[0])[i * n + j] += (g[i * n + j] - y[i * n + j] * yg) / norms[i];
                          }
                        });
}

// Rows [begin, end) of a matrix.
inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  detail::require_matrix(a, "slice_rows");
  if (begin > end || end > a.rows()) throw ShapeError("slice_rows: bad range for " + shape_str(a.shape()));
  const std::size_t n = a.cols();
  std::vector<double> out(a.values().begin() + static_cast<std::ptrdiff_t>(begin * n),
                          a.values().begin() + static_cast<std::ptrdiff_t>(end * n));
  return detail::finish("slice_rows", {&a}, Tensor({end - begin, n}, std::move(out)),
                        [off = begin * n](std::span<const double> g, GradSinks gin) {
                          for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[off + i] += g[i];
                        });
}

// ---------------------------------------------------------------------------
// Gradient checking

// max_i |analytic_i - fd_i| / max(1, |fd_i|), using central differences.
inline double finite_diff_check(const std::function<double(std::span<const double>)>& f,
                                std::span<const double> analytic, std::span<const double> x0, double h) {
  if (analytic.size() != x0.size()) throw ShapeError("finite_diff_check: gradient and point sizes differ");
  std::vector<double> x(x0.begin(), x0.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw EvaluationError("finite_diff_check: non-finite value at coordinate " + std::to_string(i));
    const double fd = (fp - fm) / (2.0 * h);
    worst = std::max(worst, std::fabs(analytic[i] - fd) / std::max(1.0, std::fabs(fd)));
  }
  return worst;
}

}  // namespace companion
