#include <benchmark/benchmark.h>

#include "debgcd/eval.hpp"
#include "debgcd/trainer.hpp"

using namespace debgcd;

namespace {

data::EmbeddingDataset synth(std::size_t per_class) {
  data::SynthSpec spec;
  spec.per_class = per_class;
  spec.seed = 1;
  return data::synth_generate(spec);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<Eigen::Index>(state.range(0));
  compute::Rng rng(1);
  const compute::Matrix a = compute::random_normal(rng, n, n, 1.0);
  const compute::Matrix b = compute::random_normal(rng, n, n, 1.0);
  for (auto _ : state) {
    compute::Tape tape;
    benchmark::DoNotOptimize(compute::matmul(tape.constant(a), tape.constant(b)).value().data());
  }
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_TrainStep(benchmark::State& state) {
  const auto ds = synth(200);
  const auto view = ds.training_view();
  Config c;
  c.batch_size = static_cast<int>(state.range(0));
  model::Model m({ds.dim(), ds.num_classes, ds.num_old}, c, 1);
  train::Sgd sgd(c.momentum, c.weight_decay);
  compute::Rng rng(2);
  const data::AugConfig aug{c.aug_noise_sigma, c.aug_dropout, c.aug_renormalize};
  for (auto _ : state) {
    state.PauseTiming();
    const auto batch = data::sample_batch(view, c.batch_size, c.labelled_fraction, aug, rng);
    state.ResumeTiming();
    benchmark::DoNotOptimize(train::train_step(m, sgd, batch, c, c.lr, c.tau_t_start).report.all);
  }
}
BENCHMARK(BM_TrainStep)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_Hungarian(benchmark::State& state) {
  const auto k = static_cast<Eigen::Index>(state.range(0));
  compute::Rng rng(3);
  eval::CountMatrix m(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) m(i, j) = static_cast<std::int64_t>(rng.below(1000));
  for (auto _ : state) benchmark::DoNotOptimize(eval::hungarian_match(m).data());
}
BENCHMARK(BM_Hungarian)->Arg(10)->Arg(100)->Arg(200);

void BM_Auroc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  compute::Rng rng(4);
  std::vector<double> s(n);
  std::vector<std::uint8_t> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = rng.uniform();
    y[i] = static_cast<std::uint8_t>(rng.below(2));
  }
  for (auto _ : state) benchmark::DoNotOptimize(eval::auroc(s, y));
}
BENCHMARK(BM_Auroc)->Arg(1000)->Arg(100000);

void BM_Evaluate(benchmark::State& state) {
  const auto ds = synth(200);
  Config c;
  model::Model m({ds.dim(), ds.num_classes, ds.num_old}, c, 1);
  for (auto _ : state) benchmark::DoNotOptimize(eval::evaluate(m, ds, c.tau_s, c.tau_o).acc_all);
}
BENCHMARK(BM_Evaluate)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
