#pragma once

#include <vector>

#include "proiso/dataset.hpp"

namespace proiso {

// Materializes lazily-defaulted trigger parameters (currently the blend
// image) for the given image shape, so repeated injections share one
// deterministic pattern.
PoisonSpec resolve_trigger_params(const PoisonSpec& spec, int channels, int height,
                                  int width);

void inject_trigger_inplace(float* image, int channels, int height, int width,
                            const PoisonSpec& spec);

std::vector<float> inject_trigger(const std::vector<float>& image, int channels,
                                  int height, int width, const PoisonSpec& spec);

// Poisons floor(rate * n) training samples chosen uniformly at random under
// the spec seed. For the clean-label sig attack the pool and the floor base
// are the target-class samples and labels are left as they are; for
// badnets/blended the poisoned labels are rewritten to the target.
PoisonedDataset build_poisoned_dataset(const CleanDataset& clean, const PoisonSpec& spec);

// Trigger on every sample whose original label differs from the target;
// target-class originals are dropped.
PoisonedDataset build_poisoned_testset(const CleanDataset& clean_test, const PoisonSpec& spec);

}  // namespace proiso
