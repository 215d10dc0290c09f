#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "debgcd/compute.hpp"

namespace debgcd::data {

using compute::Matrix;
using compute::Rng;
using compute::RowVector;

// Label value of a row whose class is not visible to training.
inline constexpr std::int32_t kUnlabelled = -1;

class TrainingView;

// Feature rows plus the Old/New class partition. Classes [0, num_old) are
// the labelled ("Old") classes; [num_old, num_classes) appear only in
// unlabelled rows.
struct EmbeddingDataset {
  Matrix features;                   // n x d
  std::vector<std::int32_t> labels;  // visible label, or kUnlabelled
  std::size_t num_old = 0;
  std::size_t num_classes = 0;
  // Per-row class for every row. Only evaluation code may read this.
  std::optional<std::vector<std::int32_t>> ground_truth;

  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }
  std::size_t labelled_count() const;

  // Throws ConsistencyError / DataError when an invariant is broken.
  void validate() const;
  // The trainer-facing subset of the dataset (no ground truth).
  TrainingView training_view() const;
};

// Read-only view of a dataset with ground truth withheld.
class TrainingView {
 public:
  const Matrix& features() const { return *features_; }
  std::span<const std::int32_t> labels() const { return labels_; }
  std::size_t num_old() const { return num_old_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t dim() const { return static_cast<std::size_t>(features_->cols()); }
  const std::vector<std::size_t>& labelled_rows() const { return labelled_; }
  const std::vector<std::size_t>& unlabelled_rows() const { return unlabelled_; }

 private:
  friend struct EmbeddingDataset;
  const Matrix* features_ = nullptr;
  std::span<const std::int32_t> labels_;
  std::size_t num_old_ = 0;
  std::size_t num_classes_ = 0;
  std::vector<std::size_t> labelled_;
  std::vector<std::size_t> unlabelled_;
};

// DGCE / DGCL binary files (little-endian, version 1).
void save_embeddings(const EmbeddingDataset& dataset, const std::filesystem::path& feature_path,
                     const std::filesystem::path& label_path);
EmbeddingDataset load_embeddings(const std::filesystem::path& feature_path,
                                 const std::filesystem::path& label_path);

// In-memory codecs behind the file functions.
std::vector<std::uint8_t> encode_features(const Matrix& features);
std::vector<std::uint8_t> encode_labels(const EmbeddingDataset& dataset);
Matrix decode_features(std::span<const std::uint8_t> bytes);
EmbeddingDataset decode_dataset(std::span<const std::uint8_t> feature_bytes,
                                std::span<const std::uint8_t> label_bytes);

struct SynthSpec {
  std::size_t num_classes = 10;
  std::size_t num_old = 5;
  std::size_t per_class = 200;
  std::size_t dim = 64;
  double cluster_sigma = 0.1;
  std::uint64_t seed = 0;
};

// Clustered unit-norm features. Class centers are an orthonormal random
// frame pulled toward one shared random direction, so every pair of
// centers has cosine kSynthCenterCosine. Half of every Old class is
// labelled; New classes are entirely unlabelled. Features are rounded to
// float32 so the dataset survives a save/load round trip unchanged.
EmbeddingDataset synth_generate(const SynthSpec& spec);
inline constexpr double kSynthCenterCosine = 0.5;

struct AugConfig {
  double noise_sigma = 0.05;
  double feature_dropout_p = 0.1;
  bool renormalize = true;

  void validate() const;
};

// Two independent feature-space views of h.
std::pair<RowVector, RowVector> make_views(const RowVector& h, const AugConfig& aug, Rng& rng);

// A mini-batch; labelled rows come first.
struct BatchViews {
  std::vector<std::size_t> indices;
  Matrix view1;
  Matrix view2;
  std::vector<std::uint8_t> labelled_mask;
  std::vector<std::int32_t> labels;  // kUnlabelled on unlabelled rows

  std::size_t size() const { return indices.size(); }
  std::size_t labelled_count() const;
};

// round(batch_size * labelled_fraction) labelled rows and the remainder
// unlabelled. Within a batch rows are drawn without replacement; a pool
// smaller than its share is cycled through whole permutations.
BatchViews sample_batch(const TrainingView& view, std::size_t batch_size, double labelled_fraction,
                        const AugConfig& aug, Rng& rng);

}  // namespace debgcd::data
