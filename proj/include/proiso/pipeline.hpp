#pragma once

#include <filesystem>
#include <string>

#include "proiso/isolation.hpp"
#include "proiso/metrics.hpp"
#include "proiso/pre_isolation.hpp"
#include "proiso/selective.hpp"
#include "proiso/synth.hpp"

namespace proiso {

struct DataConfig {
    std::string source = "synthetic";  // "synthetic" or "cifar10"
    std::filesystem::path cifar_dir;   // for source == "cifar10"
    index_t train_n = 10000;
    index_t test_n = 2000;
    int num_classes = 10;
    int channels = 3;
    int height = 32;
    int width = 32;

    void validate() const;
};

struct ExperimentConfig {
    DataConfig data;
    PoisonSpec poison;
    TrainConfig train;            // optimizer defaults shared by all stages
    PreIsolationConfig pre;
    IsolationConfig isolation;
    SelectiveTrainConfig selective;
    std::vector<int> arch_channels = {16, 32, 64, 128};
    std::filesystem::path output_dir = "runs/default";
    std::uint64_t global_seed = 0;
    std::string run_id = "run";

    void validate() const;
    std::string to_json() const;                       // resolved snapshot
    static ExperimentConfig from_json(const std::string& text);
    static ExperimentConfig load(const std::filesystem::path& file);
    void save(const std::filesystem::path& file) const;

    std::string dataset_identity() const;  // shared by runs over the same clean data
};

// poison -> pre-isolate -> progressive isolate -> selective train ->
// evaluate. Every stage persists its artifact under output_dir keyed by a
// hash of its inputs, and is skipped when a matching artifact exists.
DefenseReport run_pipeline(const ExperimentConfig& cfg);

enum class AblationKind {
    fault_ratio,
    iterations,
    poison_rate,
    clustering,
    pooling,
    k_sweep,
    lambda_sweep
};
std::string to_string(AblationKind kind);
AblationKind ablation_kind_from_string(const std::string& name);

// Runs the sweep, reusing cached stages where the swept parameter does not
// invalidate them. Tables land under output_dir/ablations/ together with a
// raw-data CSV sidecar (and an SVG plot for the iterations sweep).
ComparisonTable run_ablation(AblationKind kind, const ExperimentConfig& base);

// Environment overrides (the only ones honored): PROISO_OUTPUT_DIR replaces
// the configured output directory, PROISO_THREADS pins the matrix-kernel
// thread count.
void apply_env_overrides(ExperimentConfig& cfg);
void configure_threads_from_env();

}  // namespace proiso
