#pragma once

#include <filesystem>

#include "proiso/dataset.hpp"

namespace proiso {

struct SynthConfig {
    index_t n = 10000;
    int num_classes = 10;
    int channels = 3;
    int height = 32;
    int width = 32;
    float noise_stddev = 0.06f;
    std::uint64_t seed = 0;
};

// Procedural shape/texture classes (disk, ring, square, frame, plus, cross,
// stripes, checkerboard, ...). Class identity is carried by geometry at a
// random position/scale, with colors, gradients and pixel noise randomized
// per sample, so a linear model does poorly but a small convnet separates
// the classes cleanly.
CleanDataset make_synthetic_dataset(const SynthConfig& cfg);

// CIFAR-10 binary batches (data_batch_*.bin / test_batch.bin) under `dir`.
// limit <= 0 keeps every record.
CleanDataset load_cifar10(const std::filesystem::path& dir, bool train, index_t limit);

}  // namespace proiso
