#include "debgcd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

#include "debgcd/errors.hpp"
#include "debgcd/model.hpp"
#include "json.hpp"

namespace debgcd::eval {

namespace {

// Min-cost assignment with potentials (Kuhn-Munkres, O(n^3)) on integer
// costs. Returns the column of every row together with feasible duals.
struct Assignment {
  std::vector<std::size_t> col_of_row;
  std::vector<std::int64_t> u;  // row potentials
  std::vector<std::int64_t> v;  // column potentials
};

Assignment min_cost_assignment(const CountMatrix& cost) {
  const auto n = static_cast<std::size_t>(cost.rows());
  constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max() / 4;
  std::vector<std::int64_t> u(n + 1, 0), v(n + 1, 0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<std::int64_t> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      std::int64_t delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const std::int64_t cur = cost(static_cast<Eigen::Index>(i0 - 1),
                                      static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Assignment a;
  a.col_of_row.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) a.col_of_row[p[j] - 1] = j - 1;
  a.u.assign(u.begin() + 1, u.end());
  a.v.assign(v.begin() + 1, v.end());
  return a;
}

}  // namespace

std::vector<std::size_t> hungarian_match(const CountMatrix& confusion) {
  if (confusion.rows() != confusion.cols()) {
    throw DimensionError("hungarian_match: confusion matrix must be square");
  }
  if ((confusion.array() < 0).any()) throw DimensionError("hungarian_match: negative counts");
  const auto n = static_cast<std::size_t>(confusion.rows());
  if (n == 0) return {};

  // Left side = columns k of the confusion matrix, right side = its rows.
  const CountMatrix cost = -confusion.transpose();
  Assignment a = min_cost_assignment(cost);
  auto tight = [&](std::size_t k, std::size_t r) {
    return cost(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(r)) - a.u[k] - a.v[r] == 0;
  };

  // Every optimal assignment is a perfect matching on tight edges. Fix the
  // smallest feasible row for column 0, 1, ... by rerouting the current
  // matching along alternating paths of tight edges.
  std::vector<std::size_t>& match = a.col_of_row;
  std::vector<std::size_t> owner(n);
  for (std::size_t k = 0; k < n; ++k) owner[match[k]] = k;
  std::vector<char> fixed_right(n, 0);

  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t r = 0; r < n; ++r) {
      if (fixed_right[r] || !tight(k, r)) continue;
      if (match[k] == r) break;
      // Find a new partner for owner[r] among free tight rows, ending at
      // the row k currently holds.
      const std::size_t target = match[k];
      const std::size_t start = owner[r];
      std::vector<std::size_t> parent_right(n, n);  // right reached -> from left
      std::vector<char> seen_left(n, 0);
      std::deque<std::size_t> queue{start};
      seen_left[start] = 1;
      bool found = false;
      while (!queue.empty() && !found) {
        const std::size_t left = queue.front();
        queue.pop_front();
        for (std::size_t j = 0; j < n; ++j) {
          if (j == r || fixed_right[j] || parent_right[j] != n || !tight(left, j)) continue;
          parent_right[j] = left;
          if (j == target) {
            found = true;
            break;
          }
          const std::size_t next = owner[j];
          if (!seen_left[next]) {
            seen_left[next] = 1;
            queue.push_back(next);
          }
        }
      }
      if (!found) continue;
      for (std::size_t j = target;;) {
        const std::size_t left = parent_right[j];
        const std::size_t prev = match[left];
        match[left] = j;
        owner[j] = left;
        if (left == start) break;
        j = prev;
      }
      match[k] = r;
      owner[r] = k;
      break;
    }
    fixed_right[match[k]] = 1;
  }
  return match;
}

Accuracy gcd_accuracy(std::span<const std::size_t> predicted, std::span<const std::int32_t> truth,
                      std::size_t num_old, std::size_t num_classes) {
  if (predicted.empty()) throw EvalError("gcd_accuracy: empty input");
  if (predicted.size() != truth.size()) throw EvalError("gcd_accuracy: length mismatch");
  const auto k = static_cast<Eigen::Index>(num_classes);
  CountMatrix confusion = CountMatrix::Zero(k, k);
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] >= num_classes || truth[i] < 0 ||
        static_cast<std::size_t>(truth[i]) >= num_classes) {
      throw EvalError("gcd_accuracy: id outside [0, K)");
    }
    ++confusion(static_cast<Eigen::Index>(predicted[i]), truth[i]);
  }
  const auto h = hungarian_match(confusion);
  std::vector<std::size_t> class_of_cluster(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) class_of_cluster[h[c]] = c;

  Accuracy acc;
  acc.mapped.resize(predicted.size());
  std::size_t hit = 0, hit_old = 0, hit_new = 0, n_old = 0, n_new = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    acc.mapped[i] = class_of_cluster[predicted[i]];
    const bool ok = acc.mapped[i] == static_cast<std::size_t>(truth[i]);
    const bool is_old = static_cast<std::size_t>(truth[i]) < num_old;
    hit += ok;
    (is_old ? n_old : n_new) += 1;
    (is_old ? hit_old : hit_new) += ok;
  }
  acc.all = static_cast<double>(hit) / static_cast<double>(predicted.size());
  if (n_old > 0) acc.old_classes = static_cast<double>(hit_old) / static_cast<double>(n_old);
  if (n_new > 0) acc.new_classes = static_cast<double>(hit_new) / static_cast<double>(n_new);
  return acc;
}

double auroc(std::span<const double> scores, std::span<const std::uint8_t> is_new) {
  if (scores.size() != is_new.size()) throw EvalError("auroc: length mismatch");
  const std::size_t n = scores.size();
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(scores[i])) throw EvalError("auroc: non-finite score");
    positives += is_new[i] != 0;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) throw EvalError("auroc: needs both New and Old rows");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // Ranks i+1 .. j share their average.
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (is_new[order[t]] != 0) positive_rank_sum += avg_rank;
    }
    i = j;
  }
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

ErrorRatios error_breakdown(std::span<const std::size_t> mapped, std::span<const std::int32_t> truth,
                            std::size_t num_old) {
  if (mapped.empty()) throw EvalError("error_breakdown: empty input");
  if (mapped.size() != truth.size()) throw EvalError("error_breakdown: length mismatch");
  std::size_t n_old = 0, n_new = 0;
  std::size_t true_old = 0, false_new = 0, false_old = 0, true_new = 0;
  for (std::size_t i = 0; i < mapped.size(); ++i) {
    const auto gt = static_cast<std::size_t>(truth[i]);
    const bool gt_old = gt < num_old;
    const bool pred_old = mapped[i] < num_old;
    (gt_old ? n_old : n_new) += 1;
    if (mapped[i] == gt) continue;
    if (gt_old) {
      (pred_old ? true_old : false_new) += 1;
    } else {
      (pred_old ? false_old : true_new) += 1;
    }
  }
  auto frac = [](std::size_t a, std::size_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  return {frac(true_old, n_old), frac(false_new, n_old), frac(false_old, n_new),
          frac(true_new, n_new)};
}

std::string to_json(const EvalReport& report) {
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json j;
  j["acc_all"] = report.acc_all;
  j["acc_old"] = opt(report.acc_old);
  j["acc_new"] = opt(report.acc_new);
  j["auroc"] = opt(report.auroc);
  j["error_ratios"] = {{"true_old", report.error_ratios.true_old},
                       {"false_new", report.error_ratios.false_new},
                       {"false_old", report.error_ratios.false_old},
                       {"true_new", report.error_ratios.true_new}};
  return j.dump();
}

Predictions predict(model::Model& model, const compute::Matrix& features, double tau_s,
                    double tau_o) {
  compute::Tape tape;
  compute::Var raw = tape.constant(features);
  compute::Var a = model.adapter(tape, raw);
  compute::Var h = compute::l2_normalize_rows(a);
  Predictions out;
  out.gcd_probs = compute::softmax_rows(model.gcd_cosines(tape, h).value(), tau_s);
  out.cluster.resize(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index i = 0; i < out.gcd_probs.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < out.gcd_probs.cols(); ++k) {
      if (out.gcd_probs(i, k) > out.gcd_probs(i, best)) best = k;
    }
    out.cluster[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
  }
  auto ova = sdl::sdl_forward(model.sdl_embedding(tape, a), model.ova_positive(tape),
                              model.ova_negative(tape), tau_o);
  out.ova = sdl::summarize(ova.pos.value(), ova.neg.value());
  return out;
}

EvalReport evaluate(model::Model& model, const data::EmbeddingDataset& dataset, double tau_s,
                    double tau_o) {
  if (!dataset.ground_truth) throw EvalError("evaluate: dataset has no ground truth");
  if (dataset.dim() != model.dims().dim) {
    throw DimensionError("evaluate: dataset dimension " + std::to_string(dataset.dim()) +
                         " does not match model dimension " + std::to_string(model.dims().dim));
  }
  if (dataset.num_classes != model.dims().num_classes || dataset.num_old != model.dims().num_old) {
    throw DimensionError("evaluate: dataset class partition does not match the model");
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset.labels[i] == data::kUnlabelled) rows.push_back(i);
  }
  if (rows.empty()) throw EvalError("evaluate: no unlabelled rows");

  compute::Matrix feats(static_cast<Eigen::Index>(rows.size()), dataset.features.cols());
  std::vector<std::int32_t> truth(rows.size());
  std::vector<std::uint8_t> is_new(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    feats.row(static_cast<Eigen::Index>(i)) = dataset.features.row(static_cast<Eigen::Index>(rows[i]));
    truth[i] = (*dataset.ground_truth)[rows[i]];
    is_new[i] = static_cast<std::size_t>(truth[i]) >= dataset.num_old ? 1 : 0;
  }
  const Predictions pred = predict(model, feats, tau_s, tau_o);
  const Accuracy acc = gcd_accuracy(pred.cluster, truth, dataset.num_old, dataset.num_classes);

  EvalReport report;
  report.acc_all = acc.all;
  report.acc_old = acc.old_classes;
  report.acc_new = acc.new_classes;
  const auto positives = std::count(is_new.begin(), is_new.end(), 1);
  if (positives > 0 && static_cast<std::size_t>(positives) < is_new.size()) {
    report.auroc = auroc(pred.ova.score, is_new);
  }
  report.error_ratios = error_breakdown(acc.mapped, truth, dataset.num_old);
  return report;
}

Utilization utilization(std::span<const UsageRecord> usage, const data::EmbeddingDataset& dataset) {
  if (!dataset.ground_truth) throw EvalError("utilization: dataset has no ground truth");
  std::size_t old_total = 0, old_used = 0, new_total = 0, new_used = 0;
  for (const auto& u : usage) {
    if (u.row >= dataset.size()) throw EvalError("utilization: row out of range");
    const bool is_old = static_cast<std::size_t>((*dataset.ground_truth)[u.row]) < dataset.num_old;
    (is_old ? old_total : new_total) += 1;
    (is_old ? old_used : new_used) += u.used;
  }
  Utilization out;
  if (old_total > 0) out.old_classes = static_cast<double>(old_used) / static_cast<double>(old_total);
  if (new_total > 0) out.new_classes = static_cast<double>(new_used) / static_cast<double>(new_total);
  if (!usage.empty()) {
    out.all = static_cast<double>(old_used + new_used) / static_cast<double>(usage.size());
  }
  return out;
}

}  // namespace debgcd::eval
