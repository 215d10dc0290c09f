#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "debgcd/adl.hpp"
#include "debgcd/config.hpp"
#include "debgcd/data.hpp"
#include "debgcd/eval.hpp"
#include "debgcd/model.hpp"

namespace debgcd::train {

using compute::Matrix;
using compute::Tape;
using compute::Var;

double cosine_lr(long step, long total_steps, double lr_start, double lr_floor);
// Cosine warm schedule from tau_t_start to tau_t_end over the warmup epochs.
double teacher_temp(double epoch, const Config& config);
// config.iterations_per_epoch, or ceil(unlabelled / (batch_size / 2)) when 0.
long iterations_per_epoch(const Config& config, const data::TrainingView& view);

// Validates config against the data partition (e.g. M >= 2 for the OVA loss).
void check_setup(const Config& config, const model::ModelDims& dims);

// Gradient-blocked quantities of one step. Recorded on the first
// evaluation and replayed by later ones, so finite-difference probes see
// the same stop-gradient targets as the analytic pass.
struct FrozenTargets {
  bool recorded = false;
  Matrix teacher;                                        // 2b x K
  std::vector<adl::DebiasDecision> decisions[2];         // unlabelled rows, per view
};

struct Objective {
  Var cls_unsup, cls_sup, cls, rep, gcd;
  Var sdl_sup, sdl_unsup, sdl;
  Var adl_sup, adl_unsup, adl;
  Var all;
  bool empty_labelled = false;
  std::vector<eval::UsageRecord> usage;  // one per (view, unlabelled row)
};

// Forward of all enabled branches and the combined loss
// L_all = L_gcd + lambda_sdl L_sdl + lambda_adl L_adl. Disabled branches
// contribute exact zeros.
Objective compute_objective(model::Model& model, Tape& tape, const data::BatchViews& batch,
                            const Config& config, double tau_t, FrozenTargets& frozen);

struct LossReport {
  long step = 0;
  int epoch = 0;
  double lr = 0.0;
  double tau_t = 0.0;
  double cls_unsup = 0.0, cls_sup = 0.0, cls = 0.0, rep = 0.0, gcd = 0.0;
  double sdl_sup = 0.0, sdl_unsup = 0.0, sdl = 0.0;
  double adl_sup = 0.0, adl_unsup = 0.0, adl = 0.0;
  double all = 0.0;
  bool empty_labelled = false;
};

LossReport report_of(const Objective& objective);

// SGD with momentum and L2 weight decay; velocity buffers keyed by name.
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(compute::ParamSet& params, double lr);
  const std::map<std::string, Matrix>& velocity() const { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  std::map<std::string, Matrix> velocity_;
};

struct StepResult {
  LossReport report;
  std::vector<eval::UsageRecord> usage;
};

// Forward all branches, derive pseudo-labels, single backward, one update.
// Throws NumericError (with every term in the message) on a non-finite loss.
StepResult train_step(model::Model& model, Sgd& optimizer, const data::BatchViews& batch,
                      const Config& config, double lr, double tau_t);

struct EpochContext {
  int epoch = 0;
  bool eval_due = false;
  model::Model* model = nullptr;
  const Config* config = nullptr;
  std::span<const eval::UsageRecord> usage;
};

struct EpochObservation {
  std::optional<eval::EvalReport> report;
  std::optional<eval::Utilization> utilization;
};

// Called after every epoch. Ground-truth-aware evaluation is injected
// here; the trainer itself never sees ground truth.
using EpochHook = std::function<EpochObservation(const EpochContext&)>;

struct EpochRecord {
  int epoch = 0;
  LossReport mean;  // per-term means over the epoch's steps
  EpochObservation observation;
};

struct TrainLog {
  std::vector<LossReport> steps;
  std::vector<EpochRecord> epochs;
};

struct TrainResult {
  model::Model model;
  TrainLog log;
};

// Runs epochs x iterations_per_epoch steps. When log_out is given every
// step and epoch is appended to it as one JSON line.
TrainResult train(const data::TrainingView& view, const Config& config,
                  const EpochHook& hook = {}, std::ostream* log_out = nullptr);

std::string to_json(const LossReport& report);
std::string to_json(const EpochRecord& record);

}  // namespace debgcd::train
