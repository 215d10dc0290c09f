#include "debgcd/trainer.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>

#include "debgcd/errors.hpp"
#include "debgcd/gcd_head.hpp"
#include "debgcd/sdl.hpp"
#include "json.hpp"

namespace debgcd::train {

double cosine_lr(long step, long total_steps, double lr_start, double lr_floor) {
  if (total_steps <= 0) return lr_start;
  const double t = static_cast<double>(std::clamp(step, 0L, total_steps)) /
                   static_cast<double>(total_steps);
  return lr_floor + 0.5 * (lr_start - lr_floor) * (1.0 + std::cos(std::numbers::pi * t));
}

double teacher_temp(double epoch, const Config& config) {
  const double warm = config.tau_t_warmup_epochs;
  if (epoch >= warm) return config.tau_t_end;
  const double t = std::max(0.0, epoch) / warm;
  return config.tau_t_end +
         0.5 * (config.tau_t_start - config.tau_t_end) * (1.0 + std::cos(std::numbers::pi * t));
}

long iterations_per_epoch(const Config& config, const data::TrainingView& view) {
  if (config.iterations_per_epoch > 0) return config.iterations_per_epoch;
  const long half = std::max(1, config.batch_size / 2);
  const auto n = static_cast<long>(view.unlabelled_rows().size());
  return std::max(1L, (n + half - 1) / half);
}

void check_setup(const Config& config, const model::ModelDims& dims) {
  config.validate();
  if (config.enable_sdl && dims.num_old < 2) {
    throw ConfigError("semantic distribution learning needs M >= 2 Old classes (got M=" +
                      std::to_string(dims.num_old) + "); set enable_sdl=0");
  }
}

// ---- objective -----------------------------------------------------------

namespace {

Var zero(Tape& tape) { return tape.constant(Matrix::Zero(1, 1)); }

std::vector<std::size_t> both_views(const std::vector<std::size_t>& rows, std::size_t b) {
  std::vector<std::size_t> out(rows);
  for (auto r : rows) out.push_back(r + b);
  return out;
}

}  // namespace

Objective compute_objective(model::Model& model, Tape& tape, const data::BatchViews& batch,
                            const Config& config, double tau_t, FrozenTargets& frozen) {
  using namespace compute;
  const std::size_t b = batch.size();
  const auto bi = static_cast<Eigen::Index>(b);
  std::vector<std::size_t> lab, unl;
  std::vector<std::int32_t> lab_labels;
  for (std::size_t i = 0; i < b; ++i) {
    if (batch.labelled_mask[i] != 0) {
      lab.push_back(i);
      lab_labels.push_back(batch.labels[i]);
    } else {
      unl.push_back(i);
    }
  }
  const auto lab2 = both_views(lab, b);
  std::vector<std::int32_t> lab_labels2(lab_labels);
  lab_labels2.insert(lab_labels2.end(), lab_labels.begin(), lab_labels.end());

  Matrix stacked(2 * bi, batch.view1.cols());
  stacked.topRows(bi) = batch.view1;
  stacked.bottomRows(bi) = batch.view2;
  Var raw = tape.constant(std::move(stacked));
  Var a = model.adapter(tape, raw);
  Var h = l2_normalize_rows(a);

  Var cos = model.gcd_cosines(tape, h);
  Var p = softmax_rows(cos, config.tau_s);
  Var p1 = slice_rows(p, 0, bi);
  Var p2 = slice_rows(p, bi, bi);

  if (!frozen.recorded) frozen.teacher = softmax_rows(cos.value(), tau_t);

  Objective o;
  o.empty_labelled = lab.empty();
  o.cls_unsup = o.cls_sup = o.cls = o.rep = o.gcd = zero(tape);
  o.sdl_sup = o.sdl_unsup = o.sdl = zero(tape);
  o.adl_sup = o.adl_unsup = o.adl = zero(tape);

  if (config.enable_gcd) {
    const Matrix t1 = frozen.teacher.topRows(bi);
    const Matrix t2 = frozen.teacher.bottomRows(bi);
    o.cls_unsup = gcd::cls_unsup_loss(p1, p2, t1, t2, config.xi, config.symmetric_distillation);
    o.cls_sup = gcd::cls_sup_loss(gather_rows(p1, lab), gather_rows(p2, lab), lab_labels).value;
    o.cls = add(scale(o.cls_unsup, 1.0 - config.lambda_b), scale(o.cls_sup, config.lambda_b));
    Var z = model.rep_projection(tape, a);
    o.rep = gcd::rep_loss(slice_rows(z, 0, bi), slice_rows(z, bi, bi), batch.labelled_mask,
                          batch.labels, config.tau_u, config.tau_c, config.lambda_b);
    o.gcd = gcd::gcd_loss(o.cls_unsup, o.cls_sup, o.rep, config.lambda_b);
  }

  std::optional<sdl::OvaVars> ova;
  if (config.enable_sdl) {
    Var f = model.sdl_embedding(tape, a);
    ova = sdl::sdl_forward(f, model.ova_positive(tape), model.ova_negative(tape), config.tau_o);
    const sdl::OvaVars lab_ova{gather_rows(ova->pos, lab2), gather_rows(ova->neg, lab2)};
    const auto unl2 = both_views(unl, b);
    const sdl::OvaVars unl_ova{gather_rows(ova->pos, unl2), gather_rows(ova->neg, unl2)};
    o.sdl_sup = sdl::sdl_sup_loss(lab_ova, lab_labels2).value;
    o.sdl_unsup = sdl::sdl_unsup_loss(unl_ova).value;
    o.sdl = add(o.sdl_sup, o.sdl_unsup);
  }

  if (config.enable_adl) {
    Var pa = config.debias_on_gcd_classifier
                 ? p
                 : softmax_rows(model.adl_cosines(tape, h), config.tau_a);
    const bool guided = config.enable_distribution_guidance;
    Var unsup_total = zero(tape);
    for (int view = 0; view < 2; ++view) {
      std::vector<std::size_t> rows(unl);
      for (auto& r : rows) r += static_cast<std::size_t>(view) * b;
      if (!frozen.recorded) {
        Matrix probs(static_cast<Eigen::Index>(rows.size()), p.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) {
          probs.row(static_cast<Eigen::Index>(i)) = p.value().row(static_cast<Eigen::Index>(rows[i]));
        }
        std::vector<double> scores;
        if (ova) {
          Matrix op(static_cast<Eigen::Index>(rows.size()), ova->pos.cols());
          Matrix on(op.rows(), op.cols());
          for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto r = static_cast<Eigen::Index>(rows[i]);
            op.row(static_cast<Eigen::Index>(i)) = ova->pos.value().row(r);
            on.row(static_cast<Eigen::Index>(i)) = ova->neg.value().row(r);
          }
          scores = sdl::ood_score(op, on).score;
        }
        frozen.decisions[view] = adl::debias_weights(probs, scores, config.debias_threshold,
                                                     model.dims().num_old, guided);
      }
      const auto& decisions = frozen.decisions[view];
      unsup_total = add(unsup_total, adl::adl_unsup_loss(gather_rows(pa, rows), decisions));
      for (std::size_t i = 0; i < unl.size(); ++i) {
        o.usage.push_back({batch.indices[unl[i]], decisions[i].weight > 0.0});
      }
    }
    o.adl_unsup = scale(unsup_total, 0.5);
    o.adl_sup = adl::adl_sup_loss(gather_rows(pa, lab2), lab_labels2).value;
    o.adl = adl::adl_loss(o.adl_sup, o.adl_unsup);
  }
  frozen.recorded = true;

  o.all = o.gcd;
  if (config.enable_sdl) o.all = add(o.all, scale(o.sdl, config.lambda_sdl));
  if (config.enable_adl) o.all = add(o.all, scale(o.adl, config.lambda_adl));
  return o;
}

LossReport report_of(const Objective& o) {
  LossReport r;
  r.cls_unsup = o.cls_unsup.item();
  r.cls_sup = o.cls_sup.item();
  r.cls = o.cls.item();
  r.rep = o.rep.item();
  r.gcd = o.gcd.item();
  r.sdl_sup = o.sdl_sup.item();
  r.sdl_unsup = o.sdl_unsup.item();
  r.sdl = o.sdl.item();
  r.adl_sup = o.adl_sup.item();
  r.adl_unsup = o.adl_unsup.item();
  r.adl = o.adl.item();
  r.all = o.all.item();
  r.empty_labelled = o.empty_labelled;
  return r;
}

// ---- optimizer and steps -------------------------------------------------

void Sgd::step(compute::ParamSet& params, double lr) {
  for (auto& [name, p] : params) {
    Matrix g = p.grad;
    if (weight_decay_ != 0.0) g += weight_decay_ * p.value;
    auto it = velocity_.find(name);
    if (it == velocity_.end()) {
      it = velocity_.emplace(name, Matrix::Zero(p.value.rows(), p.value.cols())).first;
    }
    it->second = momentum_ * it->second + g;
    p.value -= lr * it->second;
  }
}

StepResult train_step(model::Model& model, Sgd& optimizer, const data::BatchViews& batch,
                      const Config& config, double lr, double tau_t) {
  model.params().zero_grad();
  Tape tape;
  FrozenTargets frozen;
  Objective o = compute_objective(model, tape, batch, config, tau_t, frozen);
  StepResult result;
  result.report = report_of(o);
  result.report.lr = lr;
  result.report.tau_t = tau_t;
  if (!std::isfinite(result.report.all)) {
    throw NumericError("non-finite loss: " + to_json(result.report));
  }
  tape.backward(o.all);
  optimizer.step(model.params(), lr);
  result.usage = std::move(o.usage);
  return result;
}

// ---- training loop -------------------------------------------------------

namespace {

void accumulate_mean(LossReport& acc, const LossReport& r, double w) {
  acc.cls_unsup += w * r.cls_unsup;
  acc.cls_sup += w * r.cls_sup;
  acc.cls += w * r.cls;
  acc.rep += w * r.rep;
  acc.gcd += w * r.gcd;
  acc.sdl_sup += w * r.sdl_sup;
  acc.sdl_unsup += w * r.sdl_unsup;
  acc.sdl += w * r.sdl;
  acc.adl_sup += w * r.adl_sup;
  acc.adl_unsup += w * r.adl_unsup;
  acc.adl += w * r.adl;
  acc.all += w * r.all;
  acc.lr += w * r.lr;
  acc.tau_t += w * r.tau_t;
}

nlohmann::json loss_json(const LossReport& r) {
  return {{"cls_u", r.cls_unsup}, {"cls_s", r.cls_sup}, {"cls", r.cls},       {"rep", r.rep},
          {"gcd", r.gcd},         {"sdl_s", r.sdl_sup}, {"sdl_u", r.sdl_unsup}, {"sdl", r.sdl},
          {"adl_s", r.adl_sup},   {"adl_u", r.adl_unsup}, {"adl", r.adl},     {"all", r.all}};
}

}  // namespace

std::string to_json(const LossReport& r) {
  nlohmann::json j = loss_json(r);
  j["type"] = "step";
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["lr"] = r.lr;
  j["tau_t"] = r.tau_t;
  if (r.empty_labelled) j["warning"] = "empty labelled batch";
  return j.dump();
}

std::string to_json(const EpochRecord& rec) {
  nlohmann::json j;
  j["type"] = "epoch";
  j["epoch"] = rec.epoch;
  j["losses"] = loss_json(rec.mean);
  const auto& obs = rec.observation;
  j["utilization_old"] = obs.utilization ? nlohmann::json(obs.utilization->old_classes) : nullptr;
  j["utilization_new"] = obs.utilization ? nlohmann::json(obs.utilization->new_classes) : nullptr;
  j["utilization"] = obs.utilization ? nlohmann::json(obs.utilization->all) : nullptr;
  j["eval"] = obs.report ? nlohmann::json::parse(eval::to_json(*obs.report)) : nullptr;
  return j.dump();
}

TrainResult train(const data::TrainingView& view, const Config& config, const EpochHook& hook,
                  std::ostream* log_out) {
  const model::ModelDims dims{view.dim(), view.num_classes(), view.num_old()};
  check_setup(config, dims);

  compute::Rng master(config.seed);
  TrainResult result{model::Model(dims, config, master.next_u64()), {}};
  compute::Rng batch_rng = master.split();
  Sgd optimizer(config.momentum, config.weight_decay);
  const data::AugConfig aug{config.aug_noise_sigma, config.aug_dropout, config.aug_renormalize};
  aug.validate();

  const long iters = iterations_per_epoch(config, view);
  const long total = iters * config.epochs;
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double tau_t = teacher_temp(epoch, config);
    std::vector<eval::UsageRecord> usage;
    EpochRecord record;
    record.epoch = epoch;
    for (long it = 0; it < iters; ++it, ++step) {
      const double lr = cosine_lr(step, total, config.lr, config.lr_floor);
      const auto batch = data::sample_batch(view, static_cast<std::size_t>(config.batch_size),
                                            config.labelled_fraction, aug, batch_rng);
      StepResult r = train_step(result.model, optimizer, batch, config, lr, tau_t);
      r.report.step = step;
      r.report.epoch = epoch;
      if (log_out != nullptr) *log_out << to_json(r.report) << '\n';
      accumulate_mean(record.mean, r.report, 1.0 / static_cast<double>(iters));
      usage.insert(usage.end(), r.usage.begin(), r.usage.end());
      result.log.steps.push_back(r.report);
    }
    record.mean.epoch = epoch;
    if (hook) {
      EpochContext ctx;
      ctx.epoch = epoch;
      ctx.eval_due = (epoch + 1) % config.eval_every == 0 || epoch + 1 == config.epochs;
      ctx.model = &result.model;
      ctx.config = &config;
      ctx.usage = usage;
      record.observation = hook(ctx);
    }
    if (log_out != nullptr) *log_out << to_json(record) << '\n';
    result.log.epochs.push_back(std::move(record));
  }
  return result;
}

}  // namespace debgcd::train
