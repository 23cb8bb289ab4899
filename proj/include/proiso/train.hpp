#pragma once

#include "proiso/dataset.hpp"
#include "proiso/net.hpp"

namespace proiso {

enum class LrSchedule { constant, step };
std::string to_string(LrSchedule s);
LrSchedule lr_schedule_from_string(const std::string& name);

struct TrainConfig {
    int epochs = 10;
    int batch_size = 64;
    double learning_rate = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    LrSchedule lr_schedule = LrSchedule::step;  // /10 at 50% and 75% of the run
    std::uint64_t rng_seed = 0;
    bool augment_flip = true;
    bool augment_crop = false;
    int crop_padding = 4;

    void validate() const;
};

// Mini-batch SGD on the mean cross-entropy. Deterministic for a fixed seed
// up to the floating-point reduction order of the matrix kernels.
ConvNet train_standard(ConvNet model, const PoisonedDataset& data, const TrainConfig& cfg);

// Fraction of samples whose argmax prediction matches the stored label;
// logit ties resolve to the lowest class index.
double evaluate(const ConvNet& model, const PoisonedDataset& data);

// Evaluation-mode per-sample cross-entropy, aligned with sample order.
std::vector<float> per_sample_losses(const ConvNet& model, const PoisonedDataset& data);

std::vector<std::int32_t> predict(const ConvNet& model, const PoisonedDataset& data);

}  // namespace proiso
