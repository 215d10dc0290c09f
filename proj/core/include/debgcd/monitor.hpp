#pragma once

#include "debgcd/data.hpp"
#include "debgcd/trainer.hpp"

namespace debgcd::train {

// Epoch hook that scores the model against the dataset's ground truth:
// utilization every epoch, a full EvalReport when evaluation is due.
// The dataset must outlive the returned hook.
EpochHook make_monitor(const data::EmbeddingDataset& dataset);

}  // namespace debgcd::train
