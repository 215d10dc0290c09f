#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "debgcd/compute.hpp"
#include "debgcd/gcd_head.hpp"

namespace debgcd::sdl {

using compute::Matrix;
using compute::Var;
using gcd::LossTerm;

// Per-classifier probabilities of the M one-vs-all heads; pos + neg == 1.
struct OvaVars {
  Var pos;  // b x M, o+
  Var neg;  // b x M, o-
};

// For classifier k: 2-way softmax over (w+_k . f, w-_k . f) / temperature
// with unit-norm weight rows.
OvaVars sdl_forward(Var f, Var weight_pos, Var weight_neg, double temperature);

// Value-level detector output with the derived scores.
struct OvaOutput {
  Matrix o_plus;
  Matrix o_minus;
  std::vector<std::size_t> top_class;  // argmax_j o+ (lowest index on ties)
  std::vector<double> score;           // s = o-[top_class]
  std::vector<double> certainty;       // d = |2 s - 1|
};

OvaOutput summarize(const Matrix& o_plus, const Matrix& o_minus);

// Hardest negative for row i: the non-label column with the largest o+
// (lowest index on ties). Throws ConfigError when M == 1.
std::vector<std::size_t> hardest_negatives(const Matrix& o_plus,
                                           std::span<const std::int32_t> labels);

// Mean over rows of -log o+[y] - min_{k != y} log o-[k].
LossTerm sdl_sup_loss(const OvaVars& ova, std::span<const std::int32_t> labels);
// Mean over rows of the summed binary entropies of the M classifiers.
LossTerm sdl_unsup_loss(const OvaVars& ova);

struct OodScores {
  std::vector<std::size_t> top_class;
  std::vector<double> score;
};
OodScores ood_score(const Matrix& o_plus, const Matrix& o_minus);
std::vector<double> certainty(std::span<const double> scores);

}  // namespace debgcd::sdl
