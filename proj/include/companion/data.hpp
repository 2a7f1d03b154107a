#pragma once

// Dataset sources and seeded epoch batching.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "companion/error.hpp"
#include "companion/rng.hpp"
#include "companion/tensor.hpp"

namespace companion {

struct DatasetSplit {
  Tensor features;  // n x input_dim
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  std::string name;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t input_dim() const { return features.cols(); }

  void validate() const {
    if (features.rank() != 2 || features.rows() != labels.size())
      throw InputError(name + ": feature rows and label count differ");
    if (labels.empty()) throw InputError(name + ": dataset is empty");
    for (auto y : labels)
      if (y >= num_classes) throw InputError(name + ": label " + std::to_string(y) + " >= K");
    for (double v : features.data())
      if (!std::isfinite(v)) throw InputError(name + ": non-finite feature value");
  }

  bool operator==(const DatasetSplit& o) const {
    return features.same_values(o.features) && labels == o.labels && num_classes == o.num_classes;
  }
};

// Rows `idx` of the split as a (features, labels) batch.
inline std::pair<Tensor, std::vector<std::size_t>> gather(const DatasetSplit& d, std::span<const std::size_t> idx) {
  const std::size_t dim = d.input_dim();
  std::vector<double> x;
  x.reserve(idx.size() * dim);
  std::vector<std::size_t> y;
  y.reserve(idx.size());
  for (auto i : idx) {
    const auto r = d.features.row(i);
    x.insert(x.end(), r.begin(), r.end());
    y.push_back(d.labels[i]);
  }
  return {Tensor({idx.size(), dim}, std::move(x)), std::move(y)};
}

// ---------------------------------------------------------------------------
// Synthetic Gaussian clusters

struct SyntheticSpec {
  std::size_t num_classes = 8;
  std::size_t input_dim = 16;
  std::size_t samples_per_class = 200;       // train split
  std::size_t test_samples_per_class = 100;
  double cluster_mean_scale = 1.0;           // radius of the sphere holding the class means
  double noise_sigma = 1.0;
  double label_noise_rate = 0.0;             // train split only

  void validate() const {
    if (num_classes < 2) throw InputError("synthetic: num_classes must be >= 2");
    if (input_dim < 1) throw InputError("synthetic: input_dim must be >= 1");
    if (samples_per_class < 1 || test_samples_per_class < 1) throw InputError("synthetic: need >= 1 sample per class");
    if (!(noise_sigma >= 0.0)) throw InputError("synthetic: noise_sigma must be >= 0");
    if (!(label_noise_rate >= 0.0 && label_noise_rate < 1.0)) throw InputError("synthetic: label_noise_rate must be in [0, 1)");
  }
};

struct ClusterData {
  DatasetSplit train;
  DatasetSplit test;
  std::vector<std::vector<double>> means;
  std::vector<std::size_t> clean_train_labels;
};

inline ClusterData generate_clusters(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t K = spec.num_classes, D = spec.input_dim;

  ClusterData out;
  auto mean_rng = rng_stream(seed, "clusters/means");
  for (std::size_t c = 0; c < K; ++c) {
    std::vector<double> m(D);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& v : m) {
        v = mean_rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
    } while (norm == 0.0);
    for (double& v : m) v *= spec.cluster_mean_scale / norm;
    out.means.push_back(std::move(m));
  }

  auto make = [&](std::size_t per_class, std::string_view tag, std::string name) {
    auto rng = rng_stream(seed, tag);
    DatasetSplit s;
    s.num_classes = K;
    s.name = std::move(name);
    std::vector<double> x;
    x.reserve(per_class * K * D);
    // Interleaved by class: sample i belongs to class i % K.
    for (std::size_t i = 0; i < per_class * K; ++i) {
      const std::size_t c = i % K;
      for (std::size_t j = 0; j < D; ++j) x.push_back(out.means[c][j] + spec.noise_sigma * rng.normal());
      s.labels.push_back(c);
    }
    s.features = Tensor({per_class * K, D}, std::move(x));
    return s;
  };

  out.train = make(spec.samples_per_class, "clusters/train", "train");
  out.test = make(spec.test_samples_per_class, "clusters/test", "test");
  out.clean_train_labels = out.train.labels;

  // Each train label is resampled uniformly over all K classes with
  // probability label_noise_rate (so it may land on its original value).
  auto noise_rng = rng_stream(seed, "clusters/label-noise");
  for (auto& y : out.train.labels) {
    const bool flip = noise_rng.uniform01() < spec.label_noise_rate;
    const auto draw = noise_rng.below(K);
    if (flip) y = draw;
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV: header "label,f0,f1,...", one sample per row.

inline DatasetSplit parse_csv(std::istream& is, std::string name = "csv") {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(is, line)) throw InputError(name + ": empty file");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::size_t header_cols = 1 + static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  if (line.rfind("label", 0) != 0 || header_cols < 2) throw ParseError("header must be 'label,f0,f1,...'", line_no);
  const std::size_t dim = header_cols - 1;

  DatasetSplit d;
  d.name = std::move(name);
  std::vector<double> x;
  std::size_t max_label = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::string_view rest(line);
    for (std::size_t col = 0; col <= dim; ++col) {
      const auto comma = rest.find(',');
      const bool last = col == dim;
      if (last != (comma == std::string_view::npos))
        throw ParseError("expected " + std::to_string(dim + 1) + " columns", line_no);
      const std::string_view field = last ? rest : rest.substr(0, comma);
      if (col == 0) {
        std::size_t y = 0;
        auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), y);
        if (ec != std::errc{} || p != field.data() + field.size() || field.empty())
          throw ParseError("label '" + std::string(field) + "' is not a non-negative integer", line_no);
        d.labels.push_back(y);
        max_label = std::max(max_label, y);
      } else {
        double v = 0.0;
        auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
        if (ec != std::errc{} || p != field.data() + field.size() || field.empty() || !std::isfinite(v))
          throw ParseError("feature '" + std::string(field) + "' is not a finite number", line_no);
        x.push_back(v);
      }
      if (!last) rest.remove_prefix(comma + 1);
    }
  }
  if (d.labels.empty()) throw InputError(d.name + ": no data rows");
  d.num_classes = max_label + 1;
  d.features = Tensor({d.labels.size(), dim}, std::move(x));
  return d;
}

inline DatasetSplit load_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  return parse_csv(is, path);
}

// Shortest round-trip representation for every feature.
inline void write_csv(std::ostream& os, const DatasetSplit& d) {
  os << "label";
  for (std::size_t j = 0; j < d.input_dim(); ++j) os << ",f" << j;
  os << '\n';
  char buf[64];
  for (std::size_t i = 0; i < d.size(); ++i) {
    os << d.labels[i];
    for (double v : d.features.row(i)) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
      os << ',' << std::string_view(buf, static_cast<std::size_t>(p - buf));
    }
    os << '\n';
  }
}

inline void save_csv(const std::string& path, const DatasetSplit& d) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_csv(os, d);
  if (!os) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// IDX (big-endian) image/label pairs.

namespace detail {

inline std::uint32_t read_be32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError(std::string("idx: truncated header in ") + what);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

}  // namespace detail

inline DatasetSplit parse_idx(std::istream& images, std::istream& labels, bool normalize, std::string name = "idx") {
  if (detail::read_be32(images, "images") != 0x00000803) throw FormatError("idx: bad image magic (expected 0x00000803)");
  if (detail::read_be32(labels, "labels") != 0x00000801) throw FormatError("idx: bad label magic (expected 0x00000801)");
  const std::uint32_t n_img = detail::read_be32(images, "images");
  const std::uint32_t rows = detail::read_be32(images, "images");
  const std::uint32_t cols = detail::read_be32(images, "images");
  const std::uint32_t n_lab = detail::read_be32(labels, "labels");
  if (n_img != n_lab)
    throw FormatError("idx: " + std::to_string(n_img) + " images but " + std::to_string(n_lab) + " labels");
  if (n_img == 0) throw FormatError("idx: no items");

  const std::size_t dim = std::size_t{rows} * cols;
  std::vector<unsigned char> px(std::size_t{n_img} * dim);
  if (!images.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size())))
    throw FormatError("idx: image payload shorter than header claims");
  std::vector<unsigned char> lb(n_lab);
  if (!labels.read(reinterpret_cast<char*>(lb.data()), static_cast<std::streamsize>(lb.size())))
    throw FormatError("idx: label payload shorter than header claims");

  DatasetSplit d;
  d.name = std::move(name);
  std::vector<double> x(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) x[i] = normalize ? px[i] / 255.0 : static_cast<double>(px[i]);
  d.features = Tensor({n_img, dim}, std::move(x));
  std::size_t max_label = 0;
  for (auto v : lb) {
    d.labels.push_back(v);
    max_label = std::max<std::size_t>(max_label, v);
  }
  d.num_classes = std::max<std::size_t>(max_label + 1, 2);
  return d;
}

inline DatasetSplit load_idx(const std::string& images_path, const std::string& labels_path, bool normalize) {
  std::ifstream im(images_path, std::ios::binary), lb(labels_path, std::ios::binary);
  if (!im) throw IoError("cannot open " + images_path);
  if (!lb) throw IoError("cannot open " + labels_path);
  return parse_idx(im, lb, normalize, images_path);
}

// ---------------------------------------------------------------------------
// Batching

// Fisher-Yates permutation of 0..n-1 from stream (seed, "shuffle/<epoch>"),
// chunked into batches; the last batch may be short.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                           std::uint64_t epoch) {
  if (batch_size < 1) throw InputError("epoch_batches: batch_size must be >= 1");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  auto rng = rng_stream(seed, "shuffle/" + std::to_string(epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size)
    batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                         perm.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch_size)));
  return batches;
}

inline std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size) { return (n + batch_size - 1) / batch_size; }

}  // namespace companion
