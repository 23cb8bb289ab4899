#include "proiso/isolation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "proiso/metrics.hpp"

namespace proiso {

using nlohmann::json;

void IsolationConfig::validate(const std::vector<int>& layer_channels) const {
    if (beta < 0.0) throw parameter_error("beta must be >= 0");
    if (iterations < 1) throw parameter_error("iterations must be >= 1");
    if (k_per_layer < 1) throw config_error("k_per_layer must be >= 1");
    for (int c : layer_channels)
        if (k_per_layer > c)
            throw config_error("k_per_layer " + std::to_string(k_per_layer) +
                               " exceeds a layer's channel count " + std::to_string(c));
}

ChannelStats channel_stats(const FeatureBank& bank, std::span<const index_t> benign) {
    if (benign.empty()) throw std::domain_error("benign subset is empty");
    const int total = bank.total_channels();
    ChannelStats stats;
    stats.mean.assign(std::size_t(total), 0.0);
    stats.stddev.assign(std::size_t(total), 0.0);

    // Two-pass, fixed index order; rows are iterated outermost so the bank
    // is walked sequentially.
    for (index_t i : benign) {
        const float* row = bank.row(i);
        for (int c = 0; c < total; ++c) stats.mean[std::size_t(c)] += double(row[c]);
    }
    for (int c = 0; c < total; ++c) stats.mean[std::size_t(c)] /= double(benign.size());
    for (index_t i : benign) {
        const float* row = bank.row(i);
        for (int c = 0; c < total; ++c) {
            const double dev = double(row[c]) - stats.mean[std::size_t(c)];
            stats.stddev[std::size_t(c)] += dev * dev;
        }
    }
    for (int c = 0; c < total; ++c)
        stats.stddev[std::size_t(c)] = std::sqrt(stats.stddev[std::size_t(c)] / double(benign.size()));
    return stats;
}

std::vector<double> discrepancy(const FeatureBank& bank, std::span<const index_t> poisoned,
                                const ChannelStats& stats, double beta) {
    if (poisoned.empty()) throw std::domain_error("poisoned subset is empty");
    if (beta < 0.0) throw parameter_error("beta must be >= 0");
    const int total = bank.total_channels();
    if (int(stats.mean.size()) != total) throw shape_error("stats do not match the bank");

    std::vector<double> mx(static_cast<std::size_t>(total), -std::numeric_limits<double>::infinity());
    for (index_t i : poisoned) {
        const float* row = bank.row(i);
        for (int c = 0; c < total; ++c)
            mx[std::size_t(c)] = std::max(mx[std::size_t(c)], double(row[c]));
    }
    std::vector<double> d(static_cast<std::size_t>(total));
    for (int c = 0; c < total; ++c)
        d[std::size_t(c)] =
            mx[std::size_t(c)] - (stats.mean[std::size_t(c)] + beta * stats.stddev[std::size_t(c)]);
    return d;
}

ChannelSelection select_channels(const std::vector<double>& d,
                                 const std::vector<int>& layer_offsets, int k_per_layer) {
    if (layer_offsets.size() < 2 || layer_offsets.front() != 0 ||
        layer_offsets.back() != int(d.size()))
        throw shape_error("layer offsets do not partition the discrepancy vector");
    ChannelSelection sel;
    for (std::size_t l = 0; l + 1 < layer_offsets.size(); ++l) {
        const int lo = layer_offsets[l], hi = layer_offsets[l + 1];
        const int c_l = hi - lo;
        if (k_per_layer < 1 || k_per_layer > c_l)
            throw config_error("k_per_layer out of range for layer " + std::to_string(l));
        std::vector<int> idx(static_cast<std::size_t>(c_l));
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](int a, int b) {
            if (d[std::size_t(lo + a)] != d[std::size_t(lo + b)])
                return d[std::size_t(lo + a)] > d[std::size_t(lo + b)];
            return a < b;  // ties prefer the lower channel
        });
        std::vector<ChannelSelection::Pick> picks;
        for (int k = 0; k < k_per_layer; ++k)
            picks.push_back(ChannelSelection::Pick{
                idx[std::size_t(k)], d[std::size_t(lo + idx[std::size_t(k)])]});
        sel.per_layer.push_back(std::move(picks));
    }
    return sel;
}

std::vector<double> aggregate_scores(const FeatureBank& bank, const ChannelSelection& sel) {
    if (int(sel.per_layer.size()) != bank.num_layers())
        throw shape_error("selection layer count does not match the bank");
    for (std::size_t l = 0; l < sel.per_layer.size(); ++l)
        for (const auto& pick : sel.per_layer[l])
            if (pick.channel < 0 || pick.channel >= bank.layer_channels[l])
                throw shape_error("selected channel out of range");

    std::vector<double> scores(std::size_t(bank.n), 0.0);
    for (index_t i = 0; i < bank.n; ++i) {
        const float* row = bank.row(i);
        double s = 0.0;
        for (std::size_t l = 0; l < sel.per_layer.size(); ++l) {
            const int off = bank.layer_offsets[l];
            for (const auto& pick : sel.per_layer[l]) s += double(row[off + pick.channel]);
        }
        scores[std::size_t(i)] = s;
    }
    return scores;
}

namespace {

void require_disjoint_nonempty(std::span<const index_t> benign,
                               std::span<const index_t> poisoned, index_t n) {
    if (benign.empty() || poisoned.empty())
        throw std::domain_error("seed subsets must be non-empty");
    std::vector<std::uint8_t> seen(std::size_t(n), 0);
    for (index_t i : poisoned) {
        if (i < 0 || i >= n) throw std::domain_error("poisoned index out of range");
        seen[std::size_t(i)] = 1;
    }
    for (index_t i : benign) {
        if (i < 0 || i >= n) throw std::domain_error("benign index out of range");
        if (seen[std::size_t(i)]) throw std::domain_error("seed subsets overlap");
    }
}

}  // namespace

Partition one_step_isolation(const FeatureBank& bank, std::span<const index_t> benign_pool,
                             std::span<const index_t> poisoned_subset,
                             const IsolationConfig& cfg) {
    cfg.validate(bank.layer_channels);
    require_disjoint_nonempty(benign_pool, poisoned_subset, bank.n);
    const ChannelStats stats = channel_stats(bank, benign_pool);
    const std::vector<double> d = discrepancy(bank, poisoned_subset, stats, cfg.beta);
    const ChannelSelection sel = select_channels(d, bank.layer_offsets, cfg.k_per_layer);
    const std::vector<double> scores = aggregate_scores(bank, sel);
    Partition part = cluster_scores(scores, cfg.cluster, cfg.rng_seed);
    if (index_t(part.poisoned.size() + part.benign.size()) != bank.n)
        throw std::logic_error("partition does not cover the dataset");
    return part;
}

Partition one_step_isolation(const ConvNet& model, const PoisonedDataset& data,
                             std::span<const index_t> benign_pool,
                             std::span<const index_t> poisoned_subset,
                             const IsolationConfig& cfg) {
    const FeatureBank bank = extract_features(model, data, cfg.pooling);
    return one_step_isolation(bank, benign_pool, poisoned_subset, cfg);
}

IsolationState progressive_isolate(const FeatureBank& bank, std::span<const index_t> seed_benign,
                                   std::span<const index_t> seed_poisoned,
                                   const IsolationConfig& cfg,
                                   const std::vector<std::uint8_t>* ground_truth_mask) {
    cfg.validate(bank.layer_channels);
    require_disjoint_nonempty(seed_benign, seed_poisoned, bank.n);

    IsolationState state;
    state.iterations = cfg.iterations;
    state.poisoned_subset.assign(seed_poisoned.begin(), seed_poisoned.end());
    std::sort(state.poisoned_subset.begin(), state.poisoned_subset.end());

    std::vector<index_t> pool(seed_benign.begin(), seed_benign.end());
    std::sort(pool.begin(), pool.end());

    std::vector<std::uint8_t> in_subset(std::size_t(bank.n), 0);
    for (index_t i : state.poisoned_subset) in_subset[std::size_t(i)] = 1;

    const bool mask_usable = ground_truth_mask != nullptr &&
                             index_t(ground_truth_mask->size()) == bank.n;

    for (int t = 1; t <= cfg.iterations; ++t) {
        Partition part = one_step_isolation(bank, pool, state.poisoned_subset, cfg);

        IterationRecord rec;
        rec.t = t;
        rec.pool_size = index_t(pool.size());
        rec.predicted_poisoned = part.poisoned;
        if (mask_usable) {
            index_t n_true = 0;
            for (auto m : *ground_truth_mask) n_true += m ? 1 : 0;
            if (n_true > 0 && n_true < bank.n) {
                const RatePair rates = tpr_fpr(part.poisoned, *ground_truth_mask);
                rec.tpr = rates.tpr;
                rec.fpr = rates.fpr;
            }
        }
        state.trace.push_back(std::move(rec));

        // P_b^{t+1} = predicted benign  U  P_b^t, minus the fixed poisoned
        // subset so the next round's inputs stay disjoint.
        std::vector<index_t> grown;
        grown.reserve(part.benign.size() + pool.size());
        std::set_union(part.benign.begin(), part.benign.end(), pool.begin(), pool.end(),
                       std::back_inserter(grown));
        std::erase_if(grown, [&](index_t i) { return in_subset[std::size_t(i)] != 0; });

        if (!std::includes(grown.begin(), grown.end(), pool.begin(), pool.end()))
            throw std::logic_error("benign pool shrank between iterations");
        if (index_t(part.poisoned.size() + part.benign.size()) != bank.n)
            throw std::logic_error("partition does not cover the dataset");

        if (t == cfg.iterations) state.final_partition = std::move(part);
        pool = std::move(grown);
    }
    state.benign_pool = std::move(pool);
    return state;
}

void save_isolation_trace(const IsolationState& state, const IsolationConfig& cfg,
                          const std::filesystem::path& file) {
    json j;
    j["schema"] = "proiso.isolation_trace";
    j["schema_version"] = 1;
    j["config"] = {{"beta", cfg.beta},
                   {"k_per_layer", cfg.k_per_layer},
                   {"iterations", cfg.iterations},
                   {"pooling", to_string(cfg.pooling)},
                   {"cluster", to_string(cfg.cluster)}};
    j["poisoned_subset"] = state.poisoned_subset;
    j["final_benign_pool"] = state.benign_pool;
    j["final_predicted_poisoned"] = state.final_partition.poisoned;
    j["final_predicted_benign"] = state.final_partition.benign;
    json trace = json::array();
    for (const auto& rec : state.trace) {
        json r;
        r["t"] = rec.t;
        r["pool_size"] = rec.pool_size;
        r["predicted_poisoned"] = rec.predicted_poisoned;
        if (rec.tpr >= 0.0) {
            r["tpr"] = rec.tpr;
            r["fpr"] = rec.fpr;
        } else {
            r["tpr"] = nullptr;
            r["fpr"] = nullptr;
        }
        trace.push_back(std::move(r));
    }
    j["trace"] = std::move(trace);
    std::ofstream out(file);
    if (!out) throw format_error("cannot write " + file.string());
    out << j.dump(2) << "\n";
}

IsolationState load_isolation_trace(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw format_error("cannot open " + file.string());
    try {
        json j;
        in >> j;
        if (j.at("schema").get<std::string>() != "proiso.isolation_trace")
            throw format_error("not an isolation trace: " + file.string());
        if (j.at("schema_version").get<int>() != 1)
            throw format_error("isolation trace schema version unsupported: " + file.string());
        IsolationState state;
        state.iterations = j.at("config").at("iterations").get<int>();
        state.poisoned_subset = j.at("poisoned_subset").get<std::vector<index_t>>();
        state.benign_pool = j.at("final_benign_pool").get<std::vector<index_t>>();
        state.final_partition.poisoned =
            j.at("final_predicted_poisoned").get<std::vector<index_t>>();
        state.final_partition.benign =
            j.at("final_predicted_benign").get<std::vector<index_t>>();
        for (const auto& r : j.at("trace")) {
            IterationRecord rec;
            rec.t = r.at("t").get<int>();
            rec.pool_size = r.at("pool_size").get<index_t>();
            rec.predicted_poisoned = r.at("predicted_poisoned").get<std::vector<index_t>>();
            if (!r.at("tpr").is_null()) {
                rec.tpr = r.at("tpr").get<double>();
                rec.fpr = r.at("fpr").get<double>();
            }
            state.trace.push_back(std::move(rec));
        }
        return state;
    } catch (const json::exception& e) {
        throw format_error("bad isolation trace " + file.string() + ": " + e.what());
    }
}

}  // namespace proiso
