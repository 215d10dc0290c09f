#include <cmath>
#include <sstream>

#include "doctest.h"
#include "debgcd/errors.hpp"
#include "debgcd/monitor.hpp"
#include "debgcd/trainer.hpp"
#include "fixtures.hpp"

using namespace debgcd;
using namespace debgcd::train;
using compute::Matrix;

namespace {

model::Model toy_model(const data::EmbeddingDataset& ds, const Config& c) {
  model::Model m({ds.dim(), ds.num_classes, ds.num_old}, c, 5);
  compute::Rng rng(6);
  auto& fc2 = m.params().at("adapter.fc2.weight").value;  // zero at init
  fc2 = compute::random_normal(rng, fc2.rows(), fc2.cols(), 0.1);
  return m;
}

Config tiny_run() {
  Config c = fixtures::toy_config();
  c.epochs = 3;
  c.eval_every = 2;
  return c;
}

}  // namespace

TEST_CASE("schedules") {
  Config c;
  CHECK(cosine_lr(0, 100, 0.1, 1e-4) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(std::abs(cosine_lr(100, 100, 0.1, 1e-4) - 1e-4) < 1e-15);
  CHECK(std::abs(cosine_lr(50, 100, 0.1, 1e-4) - (0.1 + 1e-4) / 2) < 1e-15);
  CHECK(teacher_temp(0, c) == 0.07);
  CHECK(teacher_temp(30, c) == 0.04);
  CHECK(teacher_temp(150, c) == 0.04);
  CHECK(std::abs(teacher_temp(15, c) - 0.055) < 1e-15);
  for (int e = 1; e < 30; ++e) CHECK(teacher_temp(e, c) < teacher_temp(e - 1, c));
}

TEST_CASE("iterations per epoch") {
  const auto ds = data::synth_generate({});
  Config c;
  CHECK(iterations_per_epoch(c, ds.training_view()) == 24);
  c.iterations_per_epoch = 7;
  CHECK(iterations_per_epoch(c, ds.training_view()) == 7);
}

TEST_CASE("setup checks") {
  Config c;
  CHECK_THROWS_AS(check_setup(c, {8, 3, 1}), ConfigError);
  c.enable_sdl = false;
  c.enable_distribution_guidance = false;
  CHECK_NOTHROW(check_setup(c, {8, 3, 1}));
}

TEST_CASE("analytic gradients of every term") {
  const auto ds = fixtures::toy_dataset();
  const Config c = fixtures::toy_config();
  const auto batch = fixtures::toy_batch(ds, c);
  for (const auto& [name, pick] : fixtures::loss_terms()) {
    auto m = toy_model(ds, c);
    CAPTURE(name);
    CHECK(fixtures::term_grad_error(m, batch, c, pick) < 1e-4);
  }
}

TEST_CASE("combined objective") {
  const auto ds = fixtures::toy_dataset();
  Config c = fixtures::toy_config();
  const auto batch = fixtures::toy_batch(ds, c);
  auto m = toy_model(ds, c);
  {
    compute::Tape t;
    FrozenTargets f;
    const auto o = compute_objective(m, t, batch, c, 0.07, f);
    const auto r = report_of(o);
    CHECK(std::abs(r.all - (r.gcd + 0.01 * r.sdl + 1.0 * r.adl)) < 1e-12);
    CHECK(std::abs(r.gcd - (0.65 * r.cls_unsup + 0.35 * r.cls_sup + r.rep)) < 1e-12);
    CHECK(std::abs(r.sdl - (r.sdl_sup + r.sdl_unsup)) < 1e-12);
    CHECK(std::abs(r.adl - (r.adl_sup + r.adl_unsup)) < 1e-12);
    CHECK(o.usage.size() == 2 * (batch.size() - batch.labelled_count()));
    // The debiasing gate must let some rows through for the gradient checks to bite.
    CHECK(r.adl_unsup > 0.0);
  }
  {
    c.lambda_sdl = 0.0;
    c.lambda_adl = 0.0;
    compute::Tape t;
    FrozenTargets f;
    const auto r = report_of(compute_objective(m, t, batch, c, 0.07, f));
    CHECK(r.all == r.gcd);
  }
  {
    c.enable_sdl = c.enable_adl = c.enable_distribution_guidance = false;
    compute::Tape t;
    FrozenTargets f;
    const auto r = report_of(compute_objective(m, t, batch, c, 0.07, f));
    CHECK(r.all == r.gcd);
    CHECK(r.sdl == 0.0);
    CHECK(r.adl == 0.0);
  }
}

TEST_CASE("sgd matches the momentum update by hand") {
  compute::ParamSet ps;
  Matrix w(1, 2);
  w << 1.0, -2.0;
  ps.add("w", w);
  ps.at("w").grad = Matrix::Constant(1, 2, 0.5);
  Sgd opt(0.9, 0.1);
  opt.step(ps, 0.1);
  Matrix v1 = Matrix::Constant(1, 2, 0.5) + 0.1 * w;
  CHECK((ps.at("w").value - (w - 0.1 * v1)).cwiseAbs().maxCoeff() < 1e-15);
  const Matrix w1 = ps.at("w").value;
  opt.step(ps, 0.05);
  const Matrix v2 = 0.9 * v1 + Matrix::Constant(1, 2, 0.5) + 0.1 * w1;
  CHECK((ps.at("w").value - (w1 - 0.05 * v2)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("single step is deterministic") {
  const auto ds = fixtures::toy_dataset();
  const Config c = fixtures::toy_config();
  const auto batch = fixtures::toy_batch(ds, c);
  auto a = toy_model(ds, c);
  auto b = toy_model(ds, c);
  Sgd oa(c.momentum, c.weight_decay), ob(c.momentum, c.weight_decay);
  const auto ra = train_step(a, oa, batch, c, 0.1, 0.07);
  const auto rb = train_step(b, ob, batch, c, 0.1, 0.07);
  CHECK(to_json(ra.report) == to_json(rb.report));
  CHECK(model::encode_checkpoint(a, c) == model::encode_checkpoint(b, c));
  CHECK(model::encode_checkpoint(a, c) != model::encode_checkpoint(toy_model(ds, c), c));
}

TEST_CASE("training loop counting and logging") {
  const auto ds = fixtures::toy_dataset();
  Config c = tiny_run();
  c.epochs = 1;
  c.iterations_per_epoch = 1;
  std::ostringstream log;
  const auto r = train::train(ds.training_view(), c, {}, &log);
  CHECK(r.log.steps.size() == 1);
  CHECK(r.log.epochs.size() == 1);
  CHECK(log.str().find("\"type\":\"step\"") != std::string::npos);
  CHECK(log.str().find("\"type\":\"epoch\"") != std::string::npos);
}

TEST_CASE("monitor reports on the evaluation cadence") {
  const auto ds = fixtures::toy_dataset();
  const Config c = tiny_run();
  const auto r = train::train(ds.training_view(), c, make_monitor(ds));
  const auto steps_per_epoch = static_cast<std::size_t>(iterations_per_epoch(c, ds.training_view()));
  CHECK(r.log.steps.size() == 3 * steps_per_epoch);
  REQUIRE(r.log.epochs.size() == 3);
  CHECK_FALSE(r.log.epochs[0].observation.report.has_value());
  CHECK(r.log.epochs[1].observation.report.has_value());
  CHECK(r.log.epochs[2].observation.report.has_value());
  for (const auto& e : r.log.epochs) CHECK(e.observation.utilization.has_value());
}

TEST_CASE("identical seeds give identical runs") {
  const auto ds = fixtures::toy_dataset();
  const Config c = tiny_run();
  std::ostringstream la, lb;
  const auto a = train::train(ds.training_view(), c, make_monitor(ds), &la);
  const auto b = train::train(ds.training_view(), c, make_monitor(ds), &lb);
  CHECK(la.str() == lb.str());
  CHECK(model::encode_checkpoint(a.model, c) == model::encode_checkpoint(b.model, c));
  Config other = c;
  other.seed = 1;
  std::ostringstream lc;
  train::train(ds.training_view(), other, {}, &lc);
  CHECK(lc.str() != la.str());
}

TEST_CASE("disabled branches leave the baseline trajectory untouched") {
  const auto ds = fixtures::toy_dataset();
  Config base = tiny_run();
  base.enable_sdl = base.enable_adl = base.enable_distribution_guidance = false;
  Config zeroed = tiny_run();
  zeroed.lambda_sdl = 0.0;
  zeroed.lambda_adl = 0.0;
  const auto a = train::train(ds.training_view(), base);
  const auto b = train::train(ds.training_view(), zeroed);
  REQUIRE(a.log.steps.size() == b.log.steps.size());
  for (std::size_t i = 0; i < a.log.steps.size(); ++i) {
    CHECK(a.log.steps[i].gcd == b.log.steps[i].gcd);
    CHECK(a.log.steps[i].all == b.log.steps[i].gcd);
  }
  auto& pa = a.log.steps.back();
  CHECK(std::isfinite(pa.all));
}

TEST_CASE("losses stay finite") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto ds = fixtures::toy_dataset(seed);
    Config c = tiny_run();
    c.seed = seed;
    for (const auto& s : train::train(ds.training_view(), c).log.steps) CHECK(std::isfinite(s.all));
  }
}
