#include "debgcd/adl.hpp"

#include <cmath>

#include "debgcd/errors.hpp"

namespace debgcd::adl {

using namespace compute;

bool task_consistency(std::size_t predicted, double score, std::size_t num_old) {
  return (predicted >= num_old && score > 0.5) || (predicted < num_old && score < 0.5);
}

std::vector<DebiasDecision> debias_weights(const Matrix& gcd_probs, std::span<const double> scores,
                                           double threshold, std::size_t num_old,
                                           bool distribution_guidance) {
  const auto rows = static_cast<std::size_t>(gcd_probs.rows());
  if (distribution_guidance && scores.size() != rows) {
    throw DimensionError("debias_weights: one detector score per row required");
  }
  std::vector<DebiasDecision> out(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < gcd_probs.cols(); ++k) {
      if (gcd_probs(r, k) > gcd_probs(r, best)) best = k;
    }
    DebiasDecision& d = out[i];
    d.predicted = static_cast<std::size_t>(best);
    d.pass_threshold = gcd_probs(r, best) > threshold;
    if (!scores.empty()) {
      d.consistent = task_consistency(d.predicted, scores[i], num_old);
      d.certainty = std::abs(2.0 * scores[i] - 1.0);
    }
    if (distribution_guidance) {
      d.weight = (d.pass_threshold && d.consistent) ? d.certainty : 0.0;
    } else {
      d.weight = d.pass_threshold ? 1.0 : 0.0;
    }
  }
  return out;
}

Var adl_unsup_loss(Var adl_probs, std::span<const DebiasDecision> decisions) {
  const auto rows = static_cast<std::size_t>(adl_probs.rows());
  if (decisions.size() != rows) throw DimensionError("adl_unsup_loss: one decision per row");
  if (rows == 0) return adl_probs.tape()->constant(Matrix::Zero(1, 1));
  std::vector<std::size_t> cols(rows);
  Matrix weights(static_cast<Eigen::Index>(rows), 1);
  for (std::size_t i = 0; i < rows; ++i) {
    cols[i] = decisions[i].predicted;
    weights(static_cast<Eigen::Index>(i), 0) = decisions[i].weight;
  }
  Var nll = log_clamped(pick(adl_probs, cols));
  return scale(sum(mul_const(nll, weights)), -1.0 / static_cast<double>(rows));
}

LossTerm adl_sup_loss(Var adl_probs, std::span<const std::int32_t> labels) {
  if (labels.empty()) return {adl_probs.tape()->constant(Matrix::Zero(1, 1)), true};
  return {gcd::hard_cross_entropy(adl_probs, labels), false};
}

Var adl_loss(Var sup, Var unsup) { return add(sup, unsup); }

}  // namespace debgcd::adl
