#include "debgcd/gcd_head.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "debgcd/errors.hpp"

namespace debgcd::gcd {

using namespace compute;

namespace {

std::vector<std::size_t> to_columns(std::span<const std::int32_t> labels, Eigen::Index classes) {
  std::vector<std::size_t> cols(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw DimensionError("label " + std::to_string(labels[i]) + " outside probability columns");
    }
    cols[i] = static_cast<std::size_t>(labels[i]);
  }
  return cols;
}

Var zero_like(Var any) { return any.tape()->constant(Matrix::Zero(1, 1)); }

}  // namespace

Var gcd_forward(Var h, Var prototypes, double temperature) {
  return softmax_rows(matmul_nt(h, l2_normalize_rows(prototypes)), temperature);
}

Var soft_cross_entropy(Var probs, const Matrix& target) {
  return scale(sum(mul_const(log_clamped(probs), target)),
               -1.0 / static_cast<double>(probs.rows()));
}

Var hard_cross_entropy(Var probs, std::span<const std::int32_t> labels) {
  const auto cols = to_columns(labels, probs.cols());
  return scale(mean(log_clamped(pick(probs, cols))), -1.0);
}

Var entropy(Var probs_row) { return scale(sum(hadamard(probs_row, log_clamped(probs_row))), -1.0); }

Var cls_unsup_loss(Var student1, Var student2, const Matrix& teacher1, const Matrix& teacher2,
                   double xi, bool symmetric) {
  Var distill = soft_cross_entropy(student1, teacher2);
  if (symmetric) distill = scale(add(distill, soft_cross_entropy(student2, teacher1)), 0.5);
  Var mean_pred = col_mean(concat_rows(student1, student2));
  return sub(distill, scale(entropy(mean_pred), xi));
}

LossTerm cls_sup_loss(Var labelled1, Var labelled2, std::span<const std::int32_t> labels) {
  if (labels.empty()) return {zero_like(labelled1), true};
  Var a = hard_cross_entropy(labelled1, labels);
  Var b = hard_cross_entropy(labelled2, labels);
  return {scale(add(a, b), 0.5), false};
}

Var info_nce(Var z1, Var z2, double temperature) {
  const auto n = z1.rows();
  if (n < 2) return zero_like(z1);
  std::vector<std::size_t> diag(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < diag.size(); ++i) diag[i] = i;
  Var forward = mean(pick(log_softmax_rows(matmul_nt(z1, z2), temperature), diag));
  Var backward = mean(pick(log_softmax_rows(matmul_nt(z2, z1), temperature), diag));
  return scale(add(forward, backward), -0.5);
}

Var sup_con(Var z, std::span<const std::int32_t> labels, double temperature) {
  const auto n = z.rows();
  if (static_cast<std::size_t>(n) != labels.size()) {
    throw DimensionError("sup_con: one label per row required");
  }
  if (n < 2) return zero_like(z);
  // exp(-1e9) underflows to exactly 0, removing the anchor from its own softmax.
  Matrix self_mask = Matrix::Zero(n, n);
  Matrix weights = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    self_mask(i, i) = -1e9;
    int positives = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i && labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)]) {
        ++positives;
      }
    }
    if (positives == 0) continue;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i && labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)]) {
        weights(i, j) = 1.0 / positives;
      }
    }
  }
  Var log_prob = log_softmax_rows(add_const(matmul_nt(z, z), self_mask * temperature),
                                  temperature);
  return scale(sum(mul_const(log_prob, weights)), -1.0 / static_cast<double>(n));
}

Var rep_loss(Var z1, Var z2, std::span<const std::uint8_t> labelled_mask,
             std::span<const std::int32_t> labels, double tau_u, double tau_c, double lambda_b) {
  if (labelled_mask.size() != static_cast<std::size_t>(z1.rows()) ||
      labels.size() != labelled_mask.size()) {
    throw DimensionError("rep_loss: mask/labels must cover every row");
  }
  Var unsup = info_nce(z1, z2, tau_u);

  std::vector<std::size_t> rows;
  std::vector<std::int32_t> pooled;
  for (std::size_t i = 0; i < labelled_mask.size(); ++i) {
    if (labelled_mask[i] != 0) rows.push_back(i);
  }
  if (rows.empty()) return scale(unsup, 1.0 - lambda_b);
  for (int view = 0; view < 2; ++view) {
    for (auto r : rows) pooled.push_back(labels[r]);
  }
  Var z = concat_rows(gather_rows(z1, rows), gather_rows(z2, rows));
  Var sup = sup_con(z, pooled, tau_c);
  return add(scale(unsup, 1.0 - lambda_b), scale(sup, lambda_b));
}

Var gcd_loss(Var cls_unsup, Var cls_sup, Var rep, double lambda_b) {
  return add(add(scale(cls_unsup, 1.0 - lambda_b), scale(cls_sup, lambda_b)), rep);
}

}  // namespace debgcd::gcd
