#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "debgcd/compute.hpp"
#include "debgcd/gcd_head.hpp"

namespace debgcd::adl {

using compute::Matrix;
using compute::Var;
using gcd::LossTerm;

// Same prototype-softmax form as the GCD head, on the debiased prototypes.
inline Var adl_forward(Var h, Var prototypes, double temperature) {
  return gcd::gcd_forward(h, prototypes, temperature);
}

// True when the GCD prediction and the detector agree on Old vs New:
// predicted >= M with s > 0.5, or predicted < M with s < 0.5.
bool task_consistency(std::size_t predicted, double score, std::size_t num_old);

struct DebiasDecision {
  std::size_t predicted = 0;    // argmax of the GCD probabilities (lowest index on ties)
  bool pass_threshold = false;  // max p > threshold
  bool consistent = false;      // task_consistency(predicted, s)
  double certainty = 0.0;       // |2 s - 1|
  double weight = 0.0;          // pass * consistent * certainty, or pass alone without guidance
};

// Per-row pseudo-label decisions. With guidance off the weight is the bare
// confidence gate 1(max p > threshold); consistent/certainty are still
// reported when scores are given.
std::vector<DebiasDecision> debias_weights(const Matrix& gcd_probs, std::span<const double> scores,
                                           double threshold, std::size_t num_old,
                                           bool distribution_guidance = true);

// (1 / rows) * sum_i weight_i * -log p^a(i, predicted_i). The denominator
// is the full unlabelled row count, not the number of surviving rows.
Var adl_unsup_loss(Var adl_probs, std::span<const DebiasDecision> decisions);
LossTerm adl_sup_loss(Var adl_probs, std::span<const std::int32_t> labels);
Var adl_loss(Var sup, Var unsup);

}  // namespace debgcd::adl
