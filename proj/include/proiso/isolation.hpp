#pragma once

#include <filesystem>
#include <optional>
#include <span>

#include "proiso/clustering.hpp"
#include "proiso/dataset.hpp"
#include "proiso/features.hpp"

namespace proiso {

struct IsolationConfig {
    double beta = 3.0;      // std weight in the benign envelope
    int k_per_layer = 1;    // channels kept per layer
    int iterations = 5;
    Pooling pooling = Pooling::spatial_max;
    ClusterMethod cluster = ClusterMethod::fisher_jenks;
    std::uint64_t rng_seed = 0;  // only the k-means ablation hooks draw from it

    void validate(const std::vector<int>& layer_channels) const;
};

// Per-channel benign statistics; flat layout shared with the feature bank.
struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stddev;  // population (divide by count)
};

struct ChannelSelection {
    struct Pick {
        int channel;         // within-layer index
        double discrepancy;
    };
    std::vector<std::vector<Pick>> per_layer;  // sorted by descending discrepancy
};

ChannelStats channel_stats(const FeatureBank& bank, std::span<const index_t> benign);

// d = max over the poisoned subset minus (mean + beta * std) of the benign
// subset, per channel.
std::vector<double> discrepancy(const FeatureBank& bank, std::span<const index_t> poisoned,
                                const ChannelStats& stats, double beta);

// Top-k per layer by discrepancy; equal values prefer the lower channel.
ChannelSelection select_channels(const std::vector<double>& d,
                                 const std::vector<int>& layer_offsets, int k_per_layer);

// s_i = sum of the selected channels' feature values across layers.
std::vector<double> aggregate_scores(const FeatureBank& bank, const ChannelSelection& sel);

// One isolation round: benign stats -> channel discrepancies -> top-k ->
// per-sample scores -> two-way clustering over the whole bank.
Partition one_step_isolation(const FeatureBank& bank, std::span<const index_t> benign_pool,
                             std::span<const index_t> poisoned_subset,
                             const IsolationConfig& cfg);

// Convenience wrapper that extracts the bank first.
Partition one_step_isolation(const ConvNet& model, const PoisonedDataset& data,
                             std::span<const index_t> benign_pool,
                             std::span<const index_t> poisoned_subset,
                             const IsolationConfig& cfg);

struct IterationRecord {
    int t = 0;                      // 1-based
    index_t pool_size = 0;          // |P_b^t| fed into this round
    std::vector<index_t> predicted_poisoned;
    // Negative when ground truth is unavailable or single-class.
    double tpr = -1.0;
    double fpr = -1.0;
};

struct IsolationState {
    int iterations = 0;
    std::vector<index_t> poisoned_subset;  // P_p, fixed across rounds
    std::vector<index_t> benign_pool;      // P_b after the final round
    Partition final_partition;
    std::vector<IterationRecord> trace;
};

// Runs `cfg.iterations` rounds over one fixed feature bank, growing the
// benign pool with each round's predicted benign set. Partition coverage,
// pool monotonicity and the fixed poisoned subset are asserted every round.
IsolationState progressive_isolate(const FeatureBank& bank, std::span<const index_t> seed_benign,
                                   std::span<const index_t> seed_poisoned,
                                   const IsolationConfig& cfg,
                                   const std::vector<std::uint8_t>* ground_truth_mask);

void save_isolation_trace(const IsolationState& state, const IsolationConfig& cfg,
                          const std::filesystem::path& file);
IsolationState load_isolation_trace(const std::filesystem::path& file);

}  // namespace proiso
