#pragma once

#include <filesystem>
#include <span>

#include "proiso/dataset.hpp"
#include "proiso/net.hpp"

namespace proiso {

enum class Pooling { spatial_max, spatial_mean };
std::string to_string(Pooling p);
Pooling pooling_from_string(const std::string& name);

// Per-sample, per-layer, per-channel scalars: one row per sample, columns
// grouped by tap layer. layer_offsets has one entry per layer plus a final
// total, so layer l occupies columns [layer_offsets[l], layer_offsets[l+1]).
struct FeatureBank {
    index_t n = 0;
    std::vector<int> layer_channels;
    std::vector<int> layer_offsets;
    Pooling pooling = Pooling::spatial_max;
    std::vector<float> values;  // row-major [n, total_channels]

    int num_layers() const { return int(layer_channels.size()); }
    int total_channels() const { return layer_offsets.empty() ? 0 : layer_offsets.back(); }
    const float* row(index_t i) const { return values.data() + i * total_channels(); }
    float at(index_t i, int column) const { return row(i)[column]; }
    void check_invariants() const;  // offsets partition columns; values finite
};

// Evaluation-mode forward over the dataset; the tap points are the pooled
// block outputs, reduced spatially per channel.
FeatureBank extract_features(const ConvNet& model, const PoisonedDataset& data,
                             Pooling pooling);

void save_feature_bank(const FeatureBank& bank, const std::filesystem::path& dir);
FeatureBank load_feature_bank(const std::filesystem::path& dir);

}  // namespace proiso
