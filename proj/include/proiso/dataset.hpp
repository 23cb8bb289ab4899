#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "proiso/common.hpp"
#include "proiso/errors.hpp"

namespace proiso {

enum class AttackKind { badnets, blended, sig };

std::string to_string(AttackKind kind);
AttackKind attack_kind_from_string(const std::string& name);

struct BadnetsParams {
    int patch_h = 3;
    int patch_w = 3;
    // -1 anchors the patch to the bottom/right edge.
    int top = -1;
    int left = -1;
    float pixel_value = 1.0f;
};

struct BlendedParams {
    float alpha = 0.1f;
    // Empty means: generated once from the spec seed, sized to the images.
    std::vector<float> blend_image;
};

struct SigParams {
    // Horizontal sinusoid added to every row and channel.
    float amplitude = 20.0f / 255.0f;
    float frequency = 6.0f;
};

struct PoisonSpec {
    AttackKind attack_kind = AttackKind::badnets;
    double poison_rate = 0.05;
    int target_label = 0;
    std::uint64_t rng_seed = 0;
    BadnetsParams badnets;
    BlendedParams blended;
    SigParams sig;

    void validate(int num_classes) const;
};

enum class Split { train, clean_test, poisoned_test };
std::string to_string(Split split);
Split split_from_string(const std::string& name);

struct CleanDataset {
    index_t n = 0;
    int channels = 0;
    int height = 0;
    int width = 0;
    int num_classes = 0;
    std::vector<float> images;  // n * c * h * w, values in [0, 1]
    std::vector<std::int32_t> labels;

    index_t image_size() const { return index_t(channels) * height * width; }
    const float* image(index_t i) const { return images.data() + i * image_size(); }
};

struct PoisonedDataset {
    index_t n = 0;
    int channels = 0;
    int height = 0;
    int width = 0;
    int num_classes = 0;
    std::vector<float> images;                // n * c * h * w, [0, 1]
    std::vector<std::int32_t> labels;         // post-poisoning
    std::vector<std::int32_t> original_labels;
    std::vector<std::uint8_t> poison_mask;    // 0/1 per sample
    PoisonSpec spec;
    Split split = Split::train;

    index_t image_size() const { return index_t(channels) * height * width; }
    const float* image(index_t i) const { return images.data() + i * image_size(); }
    float* image(index_t i) { return images.data() + i * image_size(); }
    index_t poison_count() const;
    void check_invariants() const;
};

// Wraps clean data as an unpoisoned dataset (all-false mask, rate 0).
PoisonedDataset wrap_clean(const CleanDataset& clean, Split split);

// Restriction to a subset of samples, preserving the order of `indices`.
PoisonedDataset subset(const PoisonedDataset& ds, std::span<const index_t> indices);

// Directory layout: manifest.json plus raw little-endian arrays
// (images.f32, labels.i32, original_labels.i32, poison_mask.u8).
// Round-trips are bit-exact.
void save_dataset(const PoisonedDataset& ds, const std::filesystem::path& dir);
PoisonedDataset load_dataset(const std::filesystem::path& dir);

}  // namespace proiso
