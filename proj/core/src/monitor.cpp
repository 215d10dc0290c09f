#include "debgcd/monitor.hpp"

#include "debgcd/errors.hpp"

namespace debgcd::train {

EpochHook make_monitor(const data::EmbeddingDataset& dataset) {
  if (!dataset.ground_truth) throw DataError("monitor: dataset has no ground truth");
  return [&dataset](const EpochContext& ctx) {
    EpochObservation obs;
    if (ctx.config->enable_adl) obs.utilization = eval::utilization(ctx.usage, dataset);
    if (ctx.eval_due) {
      obs.report = eval::evaluate(*ctx.model, dataset, ctx.config->tau_s, ctx.config->tau_o);
    }
    return obs;
  };
}

}  // namespace debgcd::train
