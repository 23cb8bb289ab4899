#pragma once

// Shared builders for small fixture datasets.

#include <random>
#include <vector>

#include "proiso/dataset.hpp"

namespace proiso::testutil {

inline CleanDataset tiny_clean(index_t n, int classes, int channels, int h, int w,
                               std::uint64_t seed) {
    CleanDataset ds;
    ds.n = n;
    ds.channels = channels;
    ds.height = h;
    ds.width = w;
    ds.num_classes = classes;
    ds.images.resize(std::size_t(n) * ds.image_size());
    ds.labels.resize(std::size_t(n));
    std::mt19937_64 rng(seed);
    for (index_t i = 0; i < n; ++i) {
        ds.labels[std::size_t(i)] = std::int32_t(i % classes);
        for (index_t p = 0; p < ds.image_size(); ++p)
            ds.images[std::size_t(i * ds.image_size() + p)] = float(uniform01(rng)) * 0.8f;
    }
    return ds;
}

// Two linearly separable classes rendered as images: the mean intensity of
// the top half minus the bottom half carries the label sign.
inline CleanDataset separable_two_class(index_t n, int h, int w, std::uint64_t seed) {
    CleanDataset ds;
    ds.n = n;
    ds.channels = 1;
    ds.height = h;
    ds.width = w;
    ds.num_classes = 2;
    ds.images.resize(std::size_t(n) * ds.image_size());
    ds.labels.resize(std::size_t(n));
    std::mt19937_64 rng(seed);
    for (index_t i = 0; i < n; ++i) {
        const int cls = int(i % 2);
        ds.labels[std::size_t(i)] = cls;
        float* img = ds.images.data() + i * ds.image_size();
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const bool top = y < h / 2;
                const float base = (top == (cls == 0)) ? 0.75f : 0.25f;
                img[y * w + x] = base + 0.1f * float(uniform01(rng) - 0.5);
            }
    }
    return ds;
}

}  // namespace proiso::testutil
