#include "debgcd/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "debgcd/errors.hpp"

namespace debgcd::data {

namespace {

constexpr std::uint32_t kFormatVersion = 1;
constexpr char kFeatureMagic[4] = {'D', 'G', 'C', 'E'};
constexpr char kLabelMagic[4] = {'D', 'G', 'C', 'L'};

class ByteWriter {
 public:
  void magic(const char (&m)[4]) { bytes_.insert(bytes_.end(), m, m + 4); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void byte(std::uint8_t v) { bytes_.push_back(v); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, const char* what) : bytes_(bytes), what_(what) {}

  void expect_magic(const char (&m)[4]) {
    need(4);
    if (std::memcmp(bytes_.data() + pos_, m, 4) != 0) {
      throw FormatError(std::string(what_) + ": bad magic");
    }
    pos_ += 4;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::uint8_t byte() {
    need(1);
    return bytes_[pos_++];
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void need(std::size_t n) const {
    if (remaining() < n) throw FormatError(std::string(what_) + ": truncated payload");
  }
  void expect_end() const {
    if (remaining() != 0) throw FormatError(std::string(what_) + ": trailing bytes after payload");
  }

 private:
  std::span<const std::uint8_t> bytes_;
  const char* what_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > UINT32_MAX) throw FormatError(std::string(what) + " does not fit in u32");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::size_t EmbeddingDataset::labelled_count() const {
  return static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](std::int32_t l) { return l != kUnlabelled; }));
}

void EmbeddingDataset::validate() const {
  if (num_old == 0 || num_old > num_classes) {
    throw ConsistencyError("need 0 < M <= K, got M=" + std::to_string(num_old) +
                           " K=" + std::to_string(num_classes));
  }
  if (labels.size() != size()) throw ConsistencyError("label count does not match feature rows");
  if (ground_truth && ground_truth->size() != size()) {
    throw ConsistencyError("ground-truth count does not match feature rows");
  }
  if (!features.allFinite()) throw DataError("feature matrix contains non-finite values");
  for (std::size_t i = 0; i < size(); ++i) {
    const std::int32_t l = labels[i];
    if (l != kUnlabelled && (l < 0 || static_cast<std::size_t>(l) >= num_old)) {
      throw ConsistencyError("row " + std::to_string(i) + ": labelled class " + std::to_string(l) +
                             " is not an Old class");
    }
    if (ground_truth) {
      const std::int32_t g = (*ground_truth)[i];
      if (g < 0 || static_cast<std::size_t>(g) >= num_classes) {
        throw ConsistencyError("row " + std::to_string(i) + ": class id " + std::to_string(g) +
                               " outside [0, K)");
      }
      if (l != kUnlabelled && l != g) {
        throw ConsistencyError("row " + std::to_string(i) + ": visible label differs from class id");
      }
    }
  }
}

TrainingView EmbeddingDataset::training_view() const {
  TrainingView v;
  v.features_ = &features;
  v.labels_ = labels;
  v.num_old_ = num_old;
  v.num_classes_ = num_classes;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    (labels[i] == kUnlabelled ? v.unlabelled_ : v.labelled_).push_back(i);
  }
  return v;
}

// ---- file formats --------------------------------------------------------

std::vector<std::uint8_t> encode_features(const Matrix& features) {
  ByteWriter w;
  w.magic(kFeatureMagic);
  w.u32(kFormatVersion);
  w.u32(checked_u32(static_cast<std::size_t>(features.rows()), "row count"));
  w.u32(checked_u32(static_cast<std::size_t>(features.cols()), "dimension"));
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    for (Eigen::Index j = 0; j < features.cols(); ++j) w.f32(static_cast<float>(features(i, j)));
  }
  return w.take();
}

std::vector<std::uint8_t> encode_labels(const EmbeddingDataset& dataset) {
  ByteWriter w;
  w.magic(kLabelMagic);
  w.u32(kFormatVersion);
  w.u32(checked_u32(dataset.size(), "row count"));
  w.u32(checked_u32(dataset.num_old, "M"));
  w.u32(checked_u32(dataset.num_classes, "K"));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    std::int32_t id = dataset.labels[i];
    if (dataset.ground_truth) {
      id = (*dataset.ground_truth)[i];
    } else if (id == kUnlabelled) {
      throw DataError("cannot encode unlabelled row " + std::to_string(i) + " without a class id");
    }
    w.i32(id);
  }
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    w.byte(dataset.labels[i] == kUnlabelled ? 0 : 1);
  }
  return w.take();
}

Matrix decode_features(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "DGCE");
  r.expect_magic(kFeatureMagic);
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) {
    throw FormatError("DGCE: unsupported version " + std::to_string(version));
  }
  const std::uint32_t n = r.u32();
  const std::uint32_t d = r.u32();
  r.need(static_cast<std::size_t>(n) * d * 4);
  Matrix out(n, d);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < d; ++j) {
      const float v = r.f32();
      if (!std::isfinite(v)) {
        throw DataError("DGCE: non-finite value at row " + std::to_string(i));
      }
      out(i, j) = static_cast<double>(v);
    }
  }
  r.expect_end();
  return out;
}

EmbeddingDataset decode_dataset(std::span<const std::uint8_t> feature_bytes,
                                std::span<const std::uint8_t> label_bytes) {
  EmbeddingDataset ds;
  ds.features = decode_features(feature_bytes);

  ByteReader r(label_bytes, "DGCL");
  r.expect_magic(kLabelMagic);
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) {
    throw FormatError("DGCL: unsupported version " + std::to_string(version));
  }
  const std::uint32_t n = r.u32();
  ds.num_old = r.u32();
  ds.num_classes = r.u32();
  r.need(static_cast<std::size_t>(n) * 5);
  std::vector<std::int32_t> ids(n);
  for (auto& id : ids) id = r.i32();
  ds.labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint8_t m = r.byte();
    if (m > 1) throw FormatError("DGCL: mask byte must be 0 or 1");
    ds.labels[i] = m == 1 ? ids[i] : kUnlabelled;
  }
  r.expect_end();
  if (n != ds.size()) {
    throw ConsistencyError("label file has " + std::to_string(n) + " rows, feature file has " +
                           std::to_string(ds.size()));
  }
  ds.ground_truth = std::move(ids);
  ds.validate();
  return ds;
}

void save_embeddings(const EmbeddingDataset& dataset, const std::filesystem::path& feature_path,
                     const std::filesystem::path& label_path) {
  dataset.validate();
  write_file(feature_path, encode_features(dataset.features));
  write_file(label_path, encode_labels(dataset));
}

EmbeddingDataset load_embeddings(const std::filesystem::path& feature_path,
                                 const std::filesystem::path& label_path) {
  const auto f = read_file(feature_path);
  const auto l = read_file(label_path);
  return decode_dataset(f, l);
}

// ---- synthetic data ------------------------------------------------------

namespace {

// Gram-Schmidt over Gaussian draws; returns count orthonormal rows.
Matrix random_orthonormal(Rng& rng, std::size_t count, std::size_t dim) {
  Matrix q(count, dim);
  for (std::size_t k = 0; k < count; ++k) {
    RowVector v;
    double norm = 0.0;
    do {
      v = compute::random_normal(rng, 1, static_cast<Eigen::Index>(dim), 1.0);
      for (std::size_t j = 0; j < k; ++j) v -= v.dot(q.row(j)) * q.row(j);
      norm = v.norm();
    } while (norm < 1e-6);
    q.row(k) = v / norm;
  }
  return q;
}

}  // namespace

EmbeddingDataset synth_generate(const SynthSpec& spec) {
  if (spec.num_classes < 1 || spec.num_old < 1 || spec.num_old > spec.num_classes) {
    throw ConfigError("synth: need 1 <= old <= classes");
  }
  if (spec.per_class < 2) throw ConfigError("synth: per_class must be at least 2");
  if (spec.dim < 2) throw ConfigError("synth: dim must be at least 2");
  if (!(spec.cluster_sigma >= 0.0) || !std::isfinite(spec.cluster_sigma)) {
    throw ConfigError("synth: cluster_sigma must be finite and non-negative");
  }

  Rng rng(spec.seed);
  const std::size_t k = spec.num_classes;
  const std::size_t d = spec.dim;

  Matrix centers(k, d);
  if (d >= k + 1) {
    // cos(c_i, c_j) = s^2 / (1 + s^2) with shared-direction weight s.
    const double s = std::sqrt(kSynthCenterCosine / (1.0 - kSynthCenterCosine));
    Matrix frame = random_orthonormal(rng, k + 1, d);
    for (std::size_t c = 0; c < k; ++c) centers.row(c) = frame.row(c) + s * frame.row(k);
  } else if (d >= k) {
    centers = random_orthonormal(rng, k, d);
  } else {
    centers = compute::random_normal(rng, k, d, 1.0);
  }
  centers = compute::l2_normalize_rows(centers);

  const std::size_t n = k * spec.per_class;
  EmbeddingDataset ds;
  ds.num_old = spec.num_old;
  ds.num_classes = k;
  ds.features.resize(n, d);
  ds.labels.assign(n, kUnlabelled);
  ds.ground_truth.emplace(n, 0);

  const std::size_t labelled_per_class = spec.per_class / 2;
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<std::size_t> order(spec.per_class);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    for (std::size_t i = 0; i < spec.per_class; ++i) {
      const std::size_t row = c * spec.per_class + i;
      RowVector x = centers.row(c);
      if (spec.cluster_sigma > 0.0) {
        x += compute::random_normal(rng, 1, static_cast<Eigen::Index>(d), spec.cluster_sigma);
      }
      x /= x.norm();
      for (std::size_t j = 0; j < d; ++j) {
        ds.features(row, j) = static_cast<double>(static_cast<float>(x(j)));
      }
      (*ds.ground_truth)[row] = static_cast<std::int32_t>(c);
    }
    if (c < spec.num_old) {
      for (std::size_t i = 0; i < labelled_per_class; ++i) {
        ds.labels[c * spec.per_class + order[i]] = static_cast<std::int32_t>(c);
      }
    }
  }
  ds.validate();
  return ds;
}

// ---- augmentation and batching -------------------------------------------

void AugConfig::validate() const {
  if (!(noise_sigma >= 0.0)) throw ConfigError("aug noise sigma must be >= 0");
  if (!(feature_dropout_p >= 0.0 && feature_dropout_p < 1.0)) {
    throw ConfigError("aug dropout probability must be in [0, 1)");
  }
}

namespace {

RowVector one_view(const RowVector& h, const AugConfig& aug, Rng& rng) {
  RowVector v = h;
  if (aug.feature_dropout_p > 0.0) {
    const double keep_scale = 1.0 / (1.0 - aug.feature_dropout_p);
    for (Eigen::Index j = 0; j < v.size(); ++j) {
      v(j) = rng.uniform() < aug.feature_dropout_p ? 0.0 : v(j) * keep_scale;
    }
  }
  if (aug.noise_sigma > 0.0) {
    for (Eigen::Index j = 0; j < v.size(); ++j) v(j) += aug.noise_sigma * rng.normal();
  }
  if (aug.renormalize) {
    const double n = v.norm();
    if (n > compute::kMinRowNorm) {
      v /= n;
    } else {
      v = h;
    }
  }
  return v;
}

void draw_rows(const std::vector<std::size_t>& pool, std::size_t count, Rng& rng,
               std::vector<std::size_t>& out) {
  std::vector<std::size_t> perm;
  std::size_t used = pool.size();
  for (std::size_t i = 0; i < count; ++i) {
    if (used == pool.size()) {
      perm = pool;
      used = 0;
    }
    // One step of a lazy Fisher-Yates shuffle.
    const std::size_t j = used + rng.below(perm.size() - used);
    std::swap(perm[used], perm[j]);
    out.push_back(perm[used++]);
  }
}

}  // namespace

std::pair<RowVector, RowVector> make_views(const RowVector& h, const AugConfig& aug, Rng& rng) {
  RowVector a = one_view(h, aug, rng);
  RowVector b = one_view(h, aug, rng);
  return {std::move(a), std::move(b)};
}

std::size_t BatchViews::labelled_count() const {
  return static_cast<std::size_t>(std::count(labelled_mask.begin(), labelled_mask.end(), 1));
}

BatchViews sample_batch(const TrainingView& view, std::size_t batch_size, double labelled_fraction,
                        const AugConfig& aug, Rng& rng) {
  if (view.labelled_rows().empty()) throw DataError("sample_batch: no labelled rows");
  if (view.unlabelled_rows().empty()) throw DataError("sample_batch: no unlabelled rows");
  if (batch_size == 0) throw ConfigError("sample_batch: batch size must be positive");
  if (!(labelled_fraction >= 0.0 && labelled_fraction <= 1.0)) {
    throw ConfigError("sample_batch: labelled fraction must be in [0, 1]");
  }
  const auto n_lab =
      static_cast<std::size_t>(std::llround(static_cast<double>(batch_size) * labelled_fraction));

  BatchViews b;
  b.indices.reserve(batch_size);
  draw_rows(view.labelled_rows(), n_lab, rng, b.indices);
  draw_rows(view.unlabelled_rows(), batch_size - n_lab, rng, b.indices);

  const auto d = static_cast<Eigen::Index>(view.dim());
  b.view1.resize(static_cast<Eigen::Index>(batch_size), d);
  b.view2.resize(static_cast<Eigen::Index>(batch_size), d);
  b.labelled_mask.resize(batch_size);
  b.labels.resize(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t row = b.indices[i];
    auto [v1, v2] = make_views(view.features().row(static_cast<Eigen::Index>(row)), aug, rng);
    b.view1.row(static_cast<Eigen::Index>(i)) = v1;
    b.view2.row(static_cast<Eigen::Index>(i)) = v2;
    b.labels[i] = view.labels()[row];
    b.labelled_mask[i] = b.labels[i] == kUnlabelled ? 0 : 1;
  }
  return b;
}

}  // namespace debgcd::data
