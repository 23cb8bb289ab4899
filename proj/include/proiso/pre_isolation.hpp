#pragma once

#include <filesystem>

#include "proiso/dataset.hpp"
#include "proiso/net.hpp"
#include "proiso/train.hpp"

namespace proiso {

struct PreIsolationConfig {
    double gamma = 0.5;
    int epochs = 20;
    double p = 0.01;  // seed poisoned-subset fraction (lowest losses)
    double q = 0.20;  // seed benign-subset fraction (highest losses)
    std::uint64_t rng_seed = 0;
    TrainConfig optim;  // optimizer hyperparameters; `epochs` above wins

    void validate() const;
};

// sign(loss - gamma) * loss with sign(0) = 0, so a sample sitting exactly at
// the threshold contributes nothing. Losses below gamma are pushed back up
// (their term is maximized), losses above descend as usual.
double lga_loss(double sample_loss, double gamma);

struct SeedSubsets {
    std::vector<index_t> poisoned;  // P_p, ascending
    std::vector<index_t> benign;    // P_b, ascending
};

// Trains `epochs` epochs on the mean LGA-transformed cross-entropy and
// returns the model together with a final evaluation-mode pass of plain
// per-sample cross-entropy.
std::pair<ConvNet, std::vector<float>> train_lga(ConvNet model, const PoisonedDataset& data,
                                                 const PreIsolationConfig& cfg);

// ceil(p*N) lowest losses -> poisoned seed, ceil(q*N) highest -> benign
// seed. Equal losses order by sample index, lower index counting as the
// lower loss.
SeedSubsets select_subsets(const std::vector<float>& losses, const PreIsolationConfig& cfg);

void save_seed_subsets(const SeedSubsets& seeds, const PreIsolationConfig& cfg,
                       const std::filesystem::path& file);
SeedSubsets load_seed_subsets(const std::filesystem::path& file);

}  // namespace proiso
