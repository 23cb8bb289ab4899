#pragma once

#include <span>

#include "proiso/dataset.hpp"
#include "proiso/net.hpp"
#include "proiso/train.hpp"

namespace proiso {

struct SelectiveTrainConfig {
    double lambda = 1.0;  // ascent weight on gated poisoned samples
    int epochs = 10;
    TrainConfig optim;  // optimizer hyperparameters; `epochs` above wins

    void validate() const;
};

// mean CE over the benign batch minus lambda * mean over the poisoned batch
// of gate * CE, where the gate is 1 only when the current model predicts
// the sample's stored label. Gated-out samples are excluded from the sum
// entirely, so their term is exactly zero, not merely small. Empty spans
// contribute 0.
double selective_objective(std::span<const float> benign_ce,
                           std::span<const float> poisoned_ce,
                           std::span<const std::uint8_t> gate, double lambda);

// Objective value for concrete batches, with fresh evaluation-mode forward
// passes for both the gate and the losses.
double selective_loss(const ConvNet& model, const PoisonedDataset& data,
                      std::span<const index_t> benign_batch,
                      std::span<const index_t> poisoned_batch, double lambda);

// Descent on the predicted benign set paired with indicator-gated ascent on
// the predicted poisoned set; one batch of each per optimizer step, the
// smaller poisoned stream cycling. An empty poisoned set reduces to
// train_standard on the benign indices, same trajectory bit for bit.
ConvNet train_selective(ConvNet model, const PoisonedDataset& data,
                        std::span<const index_t> benign_idx,
                        std::span<const index_t> poisoned_idx,
                        const SelectiveTrainConfig& cfg);

}  // namespace proiso
