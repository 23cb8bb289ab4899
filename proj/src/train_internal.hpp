#pragma once

// Shared training-loop machinery. Project-internal; the public surface is
// train.hpp / pre_isolation.hpp / selective.hpp.

#include <functional>
#include <random>
#include <span>
#include <vector>

#include "proiso/dataset.hpp"
#include "proiso/net.hpp"
#include "proiso/train.hpp"

namespace proiso::detail {

// Copies the chosen samples into a contiguous NCHW batch, applying
// horizontal-flip / pad-and-crop augmentation from `rng` when enabled.
void gather_batch(const PoisonedDataset& data, std::span<const index_t> idx,
                  const TrainConfig& cfg, bool augment, std::mt19937_64& rng,
                  std::vector<float>& images, std::vector<std::int32_t>& labels);

float scheduled_lr(const TrainConfig& cfg, int epoch, int total_epochs);

// Per-step add-on evaluated after the primary batch gradient (the second
// stream of the selective objective). Returns its loss contribution and may
// accumulate into the gradients.
using StepExtra = std::function<double(const ConvNet& net, Gradients& grads)>;

// Core loop: shuffled mini-batches over `indices` of `data`. Each sample
// contributes factor_of(ce) * ce / batch to the step objective and the same
// factor scales its logit gradient. Throws divergence_error on a non-finite
// step loss.
ConvNet run_training(ConvNet model, const PoisonedDataset& data,
                     std::span<const index_t> indices, const TrainConfig& cfg, int epochs,
                     const std::function<float(float ce)>& factor_of,
                     const StepExtra* extra);

}  // namespace proiso::detail
