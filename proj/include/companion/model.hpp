#pragma once

// Fully connected ReLU networks that emit raw logits.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "companion/error.hpp"
#include "companion/rng.hpp"
#include "companion/tensor.hpp"

namespace companion {

struct MlpSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t num_classes = 0;

  // input, hidden..., classes
  std::vector<std::size_t> dims() const {
    std::vector<std::size_t> d{input_dim};
    d.insert(d.end(), hidden_dims.begin(), hidden_dims.end());
    d.push_back(num_classes);
    return d;
  }

  std::size_t num_layers() const { return hidden_dims.size() + 1; }

  void validate() const {
    if (input_dim < 1) throw InputError("mlp spec: input_dim must be >= 1");
    for (auto h : hidden_dims)
      if (h < 1) throw InputError("mlp spec: hidden widths must be >= 1");
    if (num_classes < 2) throw InputError("mlp spec: num_classes must be >= 2");
  }

  bool operator==(const MlpSpec&) const = default;
};

// Weights W_l are [dims[l+1] x dims[l]], biases b_l are [dims[l+1]].
struct ParamSet {
  MlpSpec spec;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
    return n;
  }

  // Flat view in checkpoint order: W_0, b_0, W_1, b_1, ...
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(num_scalars());
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.insert(out.end(), weights[l].values().begin(), weights[l].values().end());
      out.insert(out.end(), biases[l].values().begin(), biases[l].values().end());
    }
    return out;
  }

  void assign_flat(std::span<const double> flat) {
    if (flat.size() != num_scalars()) throw ShapeError("assign_flat: wrong parameter count");
    std::size_t off = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      for (auto* t : {&weights[l], &biases[l]})
        for (double& v : t->data()) v = flat[off++];
    }
  }

  // Bitwise equality, so -0.0 != 0.0 and NaN payloads count.
  bool bit_equal(const ParamSet& o) const {
    const auto a = flatten(), b = o.flatten();
    return spec == o.spec && a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
  }
};

// He-normal weights, zero biases.
inline ParamSet init_params(const MlpSpec& spec, std::uint64_t seed, std::string_view tag = "init") {
  spec.validate();
  auto rng = rng_stream(seed, tag);
  ParamSet p;
  p.spec = spec;
  const auto d = spec.dims();
  for (std::size_t l = 0; l + 1 < d.size(); ++l) {
    const std::size_t fan_in = d[l], fan_out = d[l + 1];
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<double> w(fan_out * fan_in);
    for (double& v : w) v = rng.normal(0.0, stddev);
    p.weights.emplace_back(Shape{fan_out, fan_in}, std::move(w));
    p.biases.push_back(Tensor::zeros({fan_out}));
  }
  return p;
}

inline ParamSet clone_params(const ParamSet& p) {
  ParamSet c;
  c.spec = p.spec;
  for (const auto& w : p.weights) c.weights.push_back(w.detached());
  for (const auto& b : p.biases) c.biases.push_back(b.detached());
  return c;
}

// Registers every parameter as a leaf on `tape`.
inline ParamSet watch_params(Tape& tape, const ParamSet& p) {
  ParamSet w;
  w.spec = p.spec;
  for (const auto& t : p.weights) w.weights.push_back(tape.watch(t.detached()));
  for (const auto& t : p.biases) w.biases.push_back(tape.watch(t.detached()));
  return w;
}

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_rowwise(matmul(x, transpose(w)), b); }

inline Tensor forward(const ParamSet& params, const Tensor& batch) {
  if (batch.rank() != 2 || batch.cols() != params.spec.input_dim)
    throw ShapeError("forward: batch " + shape_str(batch.shape()) + " does not match input_dim " +
                     std::to_string(params.spec.input_dim));
  Tensor h = batch;
  const std::size_t L = params.weights.size();
  for (std::size_t l = 0; l < L; ++l) {
    h = linear(h, params.weights[l], params.biases[l]);
    if (l + 1 < L) h = relu(h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Checkpoint: one text line "mlp <d0> <d1> ... <dL>\n" followed by the
// parameters as little-endian float64 in flatten() order.

namespace detail {

inline void put_le(std::ostream& os, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  os.write(buf, 8);
}

inline double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const ParamSet& p) {
  os << "mlp";
  for (auto d : p.spec.dims()) os << ' ' << d;
  os << '\n';
  for (double v : p.flatten()) detail::put_le(os, v);
}

inline ParamSet read_checkpoint(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) throw FormatError("checkpoint: missing header line");
  std::istringstream hs(header);
  std::string magic;
  hs >> magic;
  if (magic != "mlp") throw FormatError("checkpoint: header must start with 'mlp'");
  std::vector<std::size_t> dims;
  std::size_t d;
  while (hs >> d) dims.push_back(d);
  if (!hs.eof() || dims.size() < 2) throw FormatError("checkpoint: malformed dimension list");

  MlpSpec spec;
  spec.input_dim = dims.front();
  spec.num_classes = dims.back();
  spec.hidden_dims.assign(dims.begin() + 1, dims.end() - 1);
  try {
    spec.validate();
  } catch (const InputError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }

  ParamSet p = init_params(spec, 0);
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (raw.size() != p.num_scalars() * 8)
    throw FormatError("checkpoint: expected " + std::to_string(p.num_scalars() * 8) + " payload bytes, found " +
                      std::to_string(raw.size()));
  std::vector<double> flat(p.num_scalars());
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = detail::get_le(raw.data() + 8 * i);
  p.assign_flat(flat);
  return p;
}

inline void save_checkpoint(const std::string& path, const ParamSet& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_checkpoint(os, p);
  if (!os) throw IoError("write failed: " + path);
}

inline ParamSet load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_checkpoint(is);
}

}  // namespace companion
