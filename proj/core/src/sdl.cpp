#include "debgcd/sdl.hpp"

#include <cmath>

#include "debgcd/errors.hpp"

namespace debgcd::sdl {

using namespace compute;

OvaVars sdl_forward(Var f, Var weight_pos, Var weight_neg, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("OVA temperature must be positive");
  Var zp = matmul_nt(f, l2_normalize_rows(weight_pos));
  Var zn = matmul_nt(f, l2_normalize_rows(weight_neg));
  Var margin = scale(sub(zp, zn), 1.0 / temperature);
  return {sigmoid(margin), sigmoid(scale(margin, -1.0))};
}

OodScores ood_score(const Matrix& o_plus, const Matrix& o_minus) {
  OodScores out;
  out.top_class.resize(static_cast<std::size_t>(o_plus.rows()));
  out.score.resize(out.top_class.size());
  for (Eigen::Index i = 0; i < o_plus.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < o_plus.cols(); ++j) {
      if (o_plus(i, j) > o_plus(i, best)) best = j;
    }
    out.top_class[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
    out.score[static_cast<std::size_t>(i)] = o_minus(i, best);
  }
  return out;
}

std::vector<double> certainty(std::span<const double> scores) {
  std::vector<double> d(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) d[i] = std::abs(2.0 * scores[i] - 1.0);
  return d;
}

OvaOutput summarize(const Matrix& o_plus, const Matrix& o_minus) {
  OvaOutput out;
  out.o_plus = o_plus;
  out.o_minus = o_minus;
  auto s = ood_score(o_plus, o_minus);
  out.top_class = std::move(s.top_class);
  out.score = std::move(s.score);
  out.certainty = certainty(out.score);
  return out;
}

std::vector<std::size_t> hardest_negatives(const Matrix& o_plus,
                                           std::span<const std::int32_t> labels) {
  if (o_plus.cols() < 2) {
    throw ConfigError("hard-negative OVA loss needs at least two Old classes (M >= 2)");
  }
  std::vector<std::size_t> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<Eigen::Index>(labels[i]);
    if (y < 0 || y >= o_plus.cols()) throw DimensionError("OVA label outside [0, M)");
    Eigen::Index best = -1;
    for (Eigen::Index k = 0; k < o_plus.cols(); ++k) {
      const auto r = static_cast<Eigen::Index>(i);
      if (k != y && (best < 0 || o_plus(r, k) > o_plus(r, best))) best = k;
    }
    out[i] = static_cast<std::size_t>(best);
  }
  return out;
}

LossTerm sdl_sup_loss(const OvaVars& ova, std::span<const std::int32_t> labels) {
  if (static_cast<std::size_t>(ova.pos.rows()) != labels.size()) {
    throw DimensionError("sdl_sup_loss: one label per row required");
  }
  const auto negatives = hardest_negatives(ova.pos.value(), labels);
  if (labels.empty()) return {ova.pos.tape()->constant(Matrix::Zero(1, 1)), true};
  std::vector<std::size_t> cols(labels.begin(), labels.end());
  Var pos_term = log_clamped(pick(ova.pos, cols));
  Var neg_term = log_clamped(pick(ova.neg, negatives));
  return {scale(mean(add(pos_term, neg_term)), -1.0), false};
}

LossTerm sdl_unsup_loss(const OvaVars& ova) {
  if (ova.pos.rows() == 0) return {ova.pos.tape()->constant(Matrix::Zero(1, 1)), true};
  Var plogp = add(hadamard(ova.pos, log_clamped(ova.pos)), hadamard(ova.neg, log_clamped(ova.neg)));
  return {scale(sum(plogp), -1.0 / static_cast<double>(ova.pos.rows())), false};
}

}  // namespace debgcd::sdl
