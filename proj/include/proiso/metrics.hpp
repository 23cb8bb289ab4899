#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "proiso/dataset.hpp"
#include "proiso/net.hpp"

namespace proiso {

struct RatePair {
    double tpr = 0.0;
    double fpr = 0.0;
};

// TPR = isolated truly-poisoned / all truly-poisoned;
// FPR = isolated benign / all benign. The mask must contain both classes.
RatePair tpr_fpr(std::span<const index_t> predicted_poisoned,
                 const std::vector<std::uint8_t>& mask);

// Fraction of the poisoned test set predicted as the attack target.
double attack_success_rate(const ConvNet& model, const PoisonedDataset& poisoned_test);

// Lowest floor(rate * n) losses, ties to the lower index. The loss-ranking
// comparison baseline.
std::vector<index_t> loss_rank_baseline(const std::vector<float>& losses, double rate);

struct DefenseReport {
    std::string run_id;
    std::string dataset_id;
    std::string attack;
    double poison_rate = 0.0;
    std::string config_json;  // full resolved config snapshot
    std::vector<double> trace_tpr;  // per isolation iteration; negative = n/a
    std::vector<double> trace_fpr;
    std::optional<double> final_tpr;
    std::optional<double> final_fpr;
    double clean_accuracy = 0.0;
    double asr = 0.0;
    std::map<std::string, double> stage_seconds;

    void check_invariants() const;
};

void save_report(const DefenseReport& report, const std::filesystem::path& file);
DefenseReport load_report(const std::filesystem::path& file);

struct ComparisonTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    std::string to_text() const;  // aligned
    std::string to_csv() const;
};

// One row per report; all reports must share a dataset identity.
ComparisonTable compare_runs(const std::vector<DefenseReport>& reports);

// Percentage with two decimals, the way rates are reported everywhere.
std::string format_rate(double fraction);

}  // namespace proiso
