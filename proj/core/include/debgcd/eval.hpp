#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "debgcd/compute.hpp"
#include "debgcd/data.hpp"
#include "debgcd/sdl.hpp"

namespace debgcd::model {
class Model;
}

namespace debgcd::eval {

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Exact maximum-weight assignment. Returns h with h[k] the row assigned to
// column k, maximizing sum_k confusion(h[k], k). Among optimal
// assignments the lexicographically smallest h is returned.
std::vector<std::size_t> hungarian_match(const CountMatrix& confusion);

struct Accuracy {
  double all = 0.0;
  std::optional<double> old_classes;  // empty when no Old ground-truth rows
  std::optional<double> new_classes;  // empty when no New ground-truth rows
  std::vector<std::size_t> mapped;    // class assigned to each row's cluster
};

// One matching over all rows; Old/New accuracies reuse it.
Accuracy gcd_accuracy(std::span<const std::size_t> predicted, std::span<const std::int32_t> truth,
                      std::size_t num_old, std::size_t num_classes);

// P(new > old) + 0.5 P(new == old) via average ranks.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> is_new);

// Misclassified rows by Old/New side of truth and prediction. The first
// two are fractions of the Old ground-truth population, the last two of
// the New population (0 when that population is empty).
struct ErrorRatios {
  double true_old = 0.0;
  double false_new = 0.0;
  double false_old = 0.0;
  double true_new = 0.0;
};
ErrorRatios error_breakdown(std::span<const std::size_t> mapped, std::span<const std::int32_t> truth,
                            std::size_t num_old);

struct EvalReport {
  double acc_all = 0.0;
  std::optional<double> acc_old;
  std::optional<double> acc_new;
  std::optional<double> auroc;
  ErrorRatios error_ratios;
};

std::string to_json(const EvalReport& report);

// Inference with the GCD classifier only, on clean (unaugmented) features.
struct Predictions {
  std::vector<std::size_t> cluster;
  compute::Matrix gcd_probs;
  sdl::OvaOutput ova;
};
Predictions predict(model::Model& model, const compute::Matrix& features, double tau_s,
                    double tau_o);

// Report over the unlabelled rows of dataset; needs ground truth.
EvalReport evaluate(model::Model& model, const data::EmbeddingDataset& dataset, double tau_s,
                    double tau_o);

// Fraction of unlabelled row visits that received a nonzero debias weight,
// split by the ground-truth side of the row.
struct Utilization {
  double old_classes = 0.0;
  double new_classes = 0.0;
  double all = 0.0;
};
struct UsageRecord {
  std::size_t row = 0;
  bool used = false;
};
Utilization utilization(std::span<const UsageRecord> usage, const data::EmbeddingDataset& dataset);

}  // namespace debgcd::eval
