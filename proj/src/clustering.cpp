#include "proiso/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace proiso {

std::string to_string(ClusterMethod m) {
    switch (m) {
        case ClusterMethod::fisher_jenks: return "fisher_jenks";
        case ClusterMethod::kmeans: return "kmeans";
        case ClusterMethod::bisecting_kmeans: return "bisecting_kmeans";
        case ClusterMethod::minibatch_kmeans: return "minibatch_kmeans";
    }
    throw parameter_error("unknown cluster method");
}

ClusterMethod cluster_method_from_string(const std::string& name) {
    if (name == "fisher_jenks") return ClusterMethod::fisher_jenks;
    if (name == "kmeans") return ClusterMethod::kmeans;
    if (name == "bisecting_kmeans") return ClusterMethod::bisecting_kmeans;
    if (name == "minibatch_kmeans") return ClusterMethod::minibatch_kmeans;
    throw parameter_error("unknown cluster method: " + name);
}

namespace {

// Indices sorted by (score, index); equal scores keep index order so the
// boundary between the two classes is deterministic.
std::vector<index_t> sorted_order(const std::vector<double>& scores) {
    std::vector<index_t> order(scores.size());
    std::iota(order.begin(), order.end(), index_t{0});
    std::sort(order.begin(), order.end(), [&](index_t a, index_t b) {
        if (scores[std::size_t(a)] != scores[std::size_t(b)])
            return scores[std::size_t(a)] < scores[std::size_t(b)];
        return a < b;
    });
    return order;
}

Partition partition_from_break(const std::vector<index_t>& order, std::size_t brk) {
    Partition part;
    part.benign.assign(order.begin(), order.begin() + brk);
    part.poisoned.assign(order.begin() + brk, order.end());
    std::sort(part.benign.begin(), part.benign.end());
    std::sort(part.poisoned.begin(), part.poisoned.end());
    return part;
}

Partition all_benign(std::size_t n) {
    Partition part;
    part.poisoned.clear();
    part.benign.resize(n);
    std::iota(part.benign.begin(), part.benign.end(), index_t{0});
    return part;
}

}  // namespace

Partition fisher_jenks_2split(const std::vector<double>& scores) {
    const std::size_t n = scores.size();
    if (n < 2) throw std::domain_error("need at least two scores to split");
    for (double s : scores)
        if (!std::isfinite(s)) throw std::domain_error("non-finite score");

    const std::vector<index_t> order = sorted_order(scores);
    if (scores[std::size_t(order.front())] == scores[std::size_t(order.back())])
        return all_benign(n);  // degenerate: nothing to separate

    // Prefix sums over the sorted values; within-class SSD of [i, j) is
    // sum2 - sum^2 / count.
    std::vector<double> ps(n + 1, 0.0), ps2(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double v = scores[std::size_t(order[i])];
        ps[i + 1] = ps[i] + v;
        ps2[i + 1] = ps2[i] + v * v;
    }
    auto ssd = [&](std::size_t i, std::size_t j) {
        const double s = ps[j] - ps[i];
        const double s2 = ps2[j] - ps2[i];
        return s2 - s * s / double(j - i);
    };

    std::size_t best = 1;
    double best_cost = ssd(0, 1) + ssd(1, n);
    for (std::size_t b = 2; b < n; ++b) {
        const double cost = ssd(0, b) + ssd(b, n);
        if (cost < best_cost) {  // strict: first minimal break wins
            best_cost = cost;
            best = b;
        }
    }
    return partition_from_break(order, best);
}

namespace {

// Lloyd iterations on a 1-D two-center problem. Assignment reduces to a
// threshold at the midpoint of the centers.
Partition kmeans_1d(const std::vector<double>& scores, double c_lo, double c_hi,
                    int max_iters) {
    const std::vector<index_t> order = sorted_order(scores);
    const std::size_t n = order.size();
    std::size_t brk = n;  // first sorted position assigned to the upper cluster
    for (int it = 0; it < max_iters; ++it) {
        const double mid = 0.5 * (c_lo + c_hi);
        std::size_t nb = 0;
        while (nb < n && scores[std::size_t(order[nb])] <= mid) ++nb;
        if (nb == 0 || nb == n) {
            brk = nb;
            break;
        }
        double lo = 0.0, hi = 0.0;
        for (std::size_t i = 0; i < nb; ++i) lo += scores[std::size_t(order[i])];
        for (std::size_t i = nb; i < n; ++i) hi += scores[std::size_t(order[i])];
        const double new_lo = lo / double(nb), new_hi = hi / double(n - nb);
        if (nb == brk && new_lo == c_lo && new_hi == c_hi) break;
        brk = nb;
        c_lo = new_lo;
        c_hi = new_hi;
    }
    if (brk == 0 || brk >= n) return all_benign(n);
    return partition_from_break(order, brk);
}

}  // namespace

Partition cluster_scores(const std::vector<double>& scores, ClusterMethod method,
                         std::uint64_t seed) {
    const std::size_t n = scores.size();
    if (n < 2) throw std::domain_error("need at least two scores to split");
    const auto [mn, mx] = std::minmax_element(scores.begin(), scores.end());
    if (*mn == *mx) return all_benign(n);

    switch (method) {
        case ClusterMethod::fisher_jenks:
            return fisher_jenks_2split(scores);
        case ClusterMethod::kmeans:
            return kmeans_1d(scores, *mn, *mx, 100);
        case ClusterMethod::bisecting_kmeans: {
            // Bisect the single parent cluster around its mean.
            double mean = 0.0;
            for (double s : scores) mean += s;
            mean /= double(n);
            const double span = (*mx - *mn) * 0.25;
            return kmeans_1d(scores, mean - span, mean + span, 100);
        }
        case ClusterMethod::minibatch_kmeans: {
            std::mt19937_64 rng(derive_seed(seed, 0x6b6d));
            double c_lo = *mn, c_hi = *mx;
            const std::size_t bsz = std::min<std::size_t>(256, n);
            for (int it = 0; it < 50; ++it) {
                double lo = 0.0, hi = 0.0;
                std::size_t nlo = 0, nhi = 0;
                for (std::size_t k = 0; k < bsz; ++k) {
                    const double v = scores[std::size_t(bounded_rand(rng, n))];
                    if (std::abs(v - c_lo) <= std::abs(v - c_hi)) {
                        lo += v;
                        ++nlo;
                    } else {
                        hi += v;
                        ++nhi;
                    }
                }
                if (nlo) c_lo += (lo / double(nlo) - c_lo) * 0.5;
                if (nhi) c_hi += (hi / double(nhi) - c_hi) * 0.5;
            }
            return kmeans_1d(scores, c_lo, c_hi, 1);
        }
    }
    throw parameter_error("unknown cluster method");
}

}  // namespace proiso
