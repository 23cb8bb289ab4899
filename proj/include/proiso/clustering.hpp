#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "proiso/common.hpp"
#include "proiso/errors.hpp"

namespace proiso {

// Two-way 1-D clustering hook. fisher_jenks is the default throughout; the
// k-means variants exist for the clustering ablation.
enum class ClusterMethod { fisher_jenks, kmeans, bisecting_kmeans, minibatch_kmeans };
std::string to_string(ClusterMethod m);
ClusterMethod cluster_method_from_string(const std::string& name);

struct Partition {
    std::vector<index_t> poisoned;  // ascending sample indices
    std::vector<index_t> benign;
};

// Optimal two-class split of the sorted scores minimizing the total
// within-class sum of squared deviations; the higher-score class is the
// poisoned one. All-equal scores fall back to an empty poisoned set.
// Ties between equally-costly break points resolve to the lowest break.
Partition fisher_jenks_2split(const std::vector<double>& scores);

Partition cluster_scores(const std::vector<double>& scores, ClusterMethod method,
                         std::uint64_t seed);

}  // namespace proiso
