#pragma once

#include <functional>
#include <string>
#include <vector>

#include "debgcd/config.hpp"
#include "debgcd/data.hpp"
#include "debgcd/model.hpp"
#include "debgcd/trainer.hpp"

namespace fixtures {

// Narrow model used by the finite-difference checks: d=16, K=4, M=2.
inline debgcd::Config toy_config() {
  debgcd::Config c;
  c.proj_hidden = 12;
  c.rep_dim = 8;
  c.sdl_dim = 8;
  c.batch_size = 8;
  // Low enough that several pseudo-labels pass the gate at initialisation.
  c.debias_threshold = 0.3;
  return c;
}

inline debgcd::data::EmbeddingDataset toy_dataset(std::uint64_t seed = 3) {
  debgcd::data::SynthSpec spec;
  spec.num_classes = 4;
  spec.num_old = 2;
  spec.per_class = 8;
  spec.dim = 16;
  spec.cluster_sigma = 0.2;
  spec.seed = seed;
  return debgcd::data::synth_generate(spec);
}

inline debgcd::data::BatchViews toy_batch(const debgcd::data::EmbeddingDataset& ds,
                                          const debgcd::Config& c, std::uint64_t seed = 11) {
  debgcd::compute::Rng rng(seed);
  const debgcd::data::AugConfig aug{c.aug_noise_sigma, c.aug_dropout, c.aug_renormalize};
  return debgcd::data::sample_batch(ds.training_view(), static_cast<std::size_t>(c.batch_size),
                                    c.labelled_fraction, aug, rng);
}

// Loss term selector over the per-step objective.
using Pick = std::function<debgcd::compute::Var(const debgcd::train::Objective&)>;

inline const std::vector<std::pair<std::string, Pick>>& loss_terms() {
  using debgcd::train::Objective;
  static const std::vector<std::pair<std::string, Pick>> terms{
      {"all", [](const Objective& o) { return o.all; }},
      {"cls_u", [](const Objective& o) { return o.cls_unsup; }},
      {"cls_s", [](const Objective& o) { return o.cls_sup; }},
      {"rep", [](const Objective& o) { return o.rep; }},
      {"sdl_s", [](const Objective& o) { return o.sdl_sup; }},
      {"sdl_u", [](const Objective& o) { return o.sdl_unsup; }},
      {"adl_s", [](const Objective& o) { return o.adl_sup; }},
      {"adl_u", [](const Objective& o) { return o.adl_unsup; }},
  };
  return terms;
}

// Max relative error of the analytic gradient of one term, with the
// stop-gradient targets frozen at their first evaluation.
inline double term_grad_error(debgcd::model::Model& model, const debgcd::data::BatchViews& batch,
                              const debgcd::Config& config, const Pick& pick, double eps = 1e-5) {
  debgcd::train::FrozenTargets frozen;
  const double tau_t = debgcd::train::teacher_temp(0, config);
  return debgcd::compute::grad_check(
      [&](debgcd::compute::Tape& tape) {
        return pick(debgcd::train::compute_objective(model, tape, batch, config, tau_t, frozen));
      },
      model.params(), eps);
}

}  // namespace fixtures
