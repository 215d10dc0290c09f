#pragma once

#include <cstdint>
#include <span>

#include "debgcd/compute.hpp"

namespace debgcd::gcd {

using compute::Matrix;
using compute::Var;

// A loss value plus whether its row set was empty (the value is then 0).
struct LossTerm {
  Var value;
  bool empty = false;
};

// softmax(h . normalize(C)^T / temperature), one row per sample.
Var gcd_forward(Var h, Var prototypes, double temperature);

// -sum_j target(i,j) log p(i,j), averaged over rows. target is constant.
Var soft_cross_entropy(Var probs, const Matrix& target);
// Mean -log p(i, labels[i]).
Var hard_cross_entropy(Var probs, std::span<const std::int32_t> labels);
// -sum_j p_j log p_j of a 1 x K probability row.
Var entropy(Var probs_row);

// Self-distillation with mean-entropy regularization. student1/2 are the
// student probabilities of the two views, teacher1/2 the sharpened and
// gradient-blocked teacher probabilities. Symmetric mode averages
// (teacher2 -> student1) and (teacher1 -> student2); otherwise only the
// former is used. The batch mean prediction always pools both views.
Var cls_unsup_loss(Var student1, Var student2, const Matrix& teacher1, const Matrix& teacher2,
                   double xi, bool symmetric = true);

// Cross-entropy of labelled student predictions (both views averaged).
LossTerm cls_sup_loss(Var labelled1, Var labelled2, std::span<const std::int32_t> labels);

// Cross-view InfoNCE: row i of z1 is positive with row i of z2 and
// negative with every other row of z2, averaged over both directions.
// A single-row batch yields 0.
Var info_nce(Var z1, Var z2, double temperature);

// Supervised contrastive loss over rows of z: positives are other rows
// with the same label, the denominator runs over all rows but the anchor.
// Anchors without a positive contribute 0.
Var sup_con(Var z, std::span<const std::int32_t> labels, double temperature);

// (1 - lambda_b) * info_nce(z1, z2) + lambda_b * sup_con on the labelled
// rows of both views pooled. z1/z2 are unit-norm projections.
Var rep_loss(Var z1, Var z2, std::span<const std::uint8_t> labelled_mask,
             std::span<const std::int32_t> labels, double tau_u, double tau_c, double lambda_b);

// (1 - lambda_b) L_cls^u + lambda_b L_cls^s + L_rep.
Var gcd_loss(Var cls_unsup, Var cls_sup, Var rep, double lambda_b);

}  // namespace debgcd::gcd
