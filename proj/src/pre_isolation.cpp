#include "proiso/pre_isolation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "train_internal.hpp"

namespace proiso {

using nlohmann::json;

void PreIsolationConfig::validate() const {
    if (!(p > 0.0 && q > p && q < 1.0))
        throw parameter_error("subset fractions must satisfy 0 < p < q < 1");
    if (gamma <= 0.0) throw parameter_error("gamma must be > 0");
    if (epochs < 1) throw parameter_error("pre-isolation epochs must be >= 1");
    optim.validate();
}

double lga_loss(double sample_loss, double gamma) {
    const double diff = sample_loss - gamma;
    const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    return sign * sample_loss;
}

std::pair<ConvNet, std::vector<float>> train_lga(ConvNet model, const PoisonedDataset& data,
                                                 const PreIsolationConfig& cfg) {
    cfg.validate();
    TrainConfig optim = cfg.optim;
    optim.rng_seed = cfg.rng_seed;
    const float gamma = float(cfg.gamma);
    auto factor = [gamma](float ce) {
        return ce > gamma ? 1.0f : (ce < gamma ? -1.0f : 0.0f);
    };
    std::vector<index_t> all(static_cast<std::size_t>(data.n));
    std::iota(all.begin(), all.end(), index_t{0});
    ConvNet trained =
        detail::run_training(std::move(model), data, all, optim, cfg.epochs, factor, nullptr);
    std::vector<float> losses = per_sample_losses(trained, data);
    return {std::move(trained), std::move(losses)};
}

SeedSubsets select_subsets(const std::vector<float>& losses, const PreIsolationConfig& cfg) {
    cfg.validate();
    const index_t n = index_t(losses.size());
    const index_t np = index_t(std::ceil(cfg.p * double(n) - 1e-9));
    const index_t nq = index_t(std::ceil(cfg.q * double(n) - 1e-9));
    if (n < np + nq)
        throw std::domain_error("dataset too small for the requested subset fractions");

    std::vector<index_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), index_t{0});
    std::sort(order.begin(), order.end(), [&](index_t a, index_t b) {
        if (losses[std::size_t(a)] != losses[std::size_t(b)])
            return losses[std::size_t(a)] < losses[std::size_t(b)];
        return a < b;
    });

    SeedSubsets seeds;
    seeds.poisoned.assign(order.begin(), order.begin() + np);
    seeds.benign.assign(order.end() - nq, order.end());
    std::sort(seeds.poisoned.begin(), seeds.poisoned.end());
    std::sort(seeds.benign.begin(), seeds.benign.end());
    return seeds;
}

void save_seed_subsets(const SeedSubsets& seeds, const PreIsolationConfig& cfg,
                       const std::filesystem::path& file) {
    json j;
    j["schema"] = "proiso.seed_subsets";
    j["schema_version"] = 1;
    j["config"] = {{"gamma", cfg.gamma}, {"epochs", cfg.epochs}, {"p", cfg.p},
                   {"q", cfg.q},         {"rng_seed", cfg.rng_seed}};
    j["poisoned"] = seeds.poisoned;
    j["benign"] = seeds.benign;
    std::ofstream out(file);
    if (!out) throw format_error("cannot write " + file.string());
    out << j.dump(2) << "\n";
}

SeedSubsets load_seed_subsets(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw format_error("cannot open " + file.string());
    try {
        json j;
        in >> j;
        if (j.at("schema").get<std::string>() != "proiso.seed_subsets")
            throw format_error("not a seed-subset file: " + file.string());
        if (j.at("schema_version").get<int>() != 1)
            throw format_error("seed-subset schema version unsupported: " + file.string());
        SeedSubsets seeds;
        seeds.poisoned = j.at("poisoned").get<std::vector<index_t>>();
        seeds.benign = j.at("benign").get<std::vector<index_t>>();
        return seeds;
    } catch (const json::exception& e) {
        throw format_error("bad seed-subset file " + file.string() + ": " + e.what());
    }
}

}  // namespace proiso
