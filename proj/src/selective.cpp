#include "proiso/selective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "train_internal.hpp"

namespace proiso {

void SelectiveTrainConfig::validate() const {
    if (lambda < 0.0) throw parameter_error("lambda must be >= 0");
    if (epochs < 1) throw parameter_error("selective epochs must be >= 1");
    optim.validate();
}

double selective_objective(std::span<const float> benign_ce,
                           std::span<const float> poisoned_ce,
                           std::span<const std::uint8_t> gate, double lambda) {
    if (gate.size() != poisoned_ce.size())
        throw shape_error("gate and poisoned batch sizes differ");
    double value = 0.0;
    if (!benign_ce.empty()) {
        double acc = 0.0;
        for (float ce : benign_ce) acc += double(ce);
        value += acc / double(benign_ce.size());
    }
    if (!poisoned_ce.empty()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < poisoned_ce.size(); ++i)
            if (gate[i]) acc += double(poisoned_ce[i]);
        value -= lambda * acc / double(poisoned_ce.size());
    }
    return value;
}

namespace {

// Forward a batch in evaluation mode, returning per-sample CE and the
// argmax gate against the stored labels.
void gated_forward(const ConvNet& model, const PoisonedDataset& data,
                   std::span<const index_t> idx, ForwardState& state,
                   std::vector<float>& ce, std::vector<std::uint8_t>& gate,
                   std::vector<std::int32_t>& labels, std::vector<float>& images) {
    const int K = model.arch().num_classes;
    const index_t isz = data.image_size();
    images.resize(idx.size() * std::size_t(isz));
    labels.resize(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        std::copy(data.image(idx[k]), data.image(idx[k]) + isz,
                  images.data() + k * std::size_t(isz));
        labels[k] = data.labels[std::size_t(idx[k])];
    }
    forward_batch(model, images.data(), int(idx.size()), state, true);
    ce.resize(idx.size());
    gate.resize(idx.size());
    softmax_xent(state.logits.data(), int(idx.size()), K, labels.data(), ce.data(),
                 nullptr, nullptr);
    for (std::size_t k = 0; k < idx.size(); ++k)
        gate[k] = argmax_row(state.logits.data() + k * std::size_t(K), K) == labels[k] ? 1 : 0;
}

}  // namespace

double selective_loss(const ConvNet& model, const PoisonedDataset& data,
                      std::span<const index_t> benign_batch,
                      std::span<const index_t> poisoned_batch, double lambda) {
    ForwardState state;
    std::vector<float> ce_b, ce_p, images;
    std::vector<std::uint8_t> gate_b, gate_p;
    std::vector<std::int32_t> labels;
    if (!benign_batch.empty())
        gated_forward(model, data, benign_batch, state, ce_b, gate_b, labels, images);
    if (!poisoned_batch.empty())
        gated_forward(model, data, poisoned_batch, state, ce_p, gate_p, labels, images);
    return selective_objective(ce_b, ce_p, gate_p, lambda);
}

ConvNet train_selective(ConvNet model, const PoisonedDataset& data,
                        std::span<const index_t> benign_idx,
                        std::span<const index_t> poisoned_idx,
                        const SelectiveTrainConfig& cfg) {
    cfg.validate();
    if (benign_idx.empty()) throw std::domain_error("benign index set is empty");
    {
        std::vector<std::uint8_t> seen(std::size_t(data.n), 0);
        for (index_t i : poisoned_idx) seen[std::size_t(i)] = 1;
        for (index_t i : benign_idx)
            if (seen[std::size_t(i)])
                throw std::domain_error("benign and poisoned index sets overlap");
    }
    TrainConfig optim = cfg.optim;
    auto factor = [](float) { return 1.0f; };

    if (poisoned_idx.empty())
        return detail::run_training(std::move(model), data, benign_idx, optim, cfg.epochs,
                                    factor, nullptr);

    // The ascent stream draws from its own RNG so that the benign stream's
    // sequence matches plain training exactly.
    struct AscentStream {
        const PoisonedDataset& data;
        std::vector<index_t> order;
        std::size_t cursor;
        std::mt19937_64 rng;
        int batch_size;
        float lambda;
        ForwardState state;
        std::vector<float> images, ce, weights, dlogits;
        std::vector<std::int32_t> labels;
        std::vector<std::uint8_t> gate;

        double step(const ConvNet& net, Gradients& grads) {
            const int K = net.arch().num_classes;
            std::vector<index_t> batch;
            for (int k = 0; k < batch_size && k < int(order.size()); ++k) {
                if (cursor == order.size()) {
                    fisher_yates_shuffle(order, rng);
                    cursor = 0;
                }
                batch.push_back(order[cursor++]);
            }
            const int bsz = int(batch.size());
            // No augmentation: the gate reflects the stored image.
            gated_forward(net, data, batch, state, ce, gate, labels, images);
            double ascent = 0.0;
            weights.assign(std::size_t(bsz), 0.0f);
            for (int i = 0; i < bsz; ++i) {
                if (!gate[std::size_t(i)]) continue;  // contributes exactly zero
                ascent += double(ce[std::size_t(i)]);
                weights[std::size_t(i)] = -lambda / float(bsz);
            }
            dlogits.resize(std::size_t(bsz) * K);
            softmax_xent(state.logits.data(), bsz, K, labels.data(), nullptr,
                         dlogits.data(), weights.data());
            backward_batch(net, state, dlogits, grads);
            return -double(lambda) * ascent / double(bsz);
        }
    };

    AscentStream ascent{data,
                        {poisoned_idx.begin(), poisoned_idx.end()},
                        poisoned_idx.size(),  // force a shuffle on first use
                        std::mt19937_64(derive_seed(optim.rng_seed, 0xa5ce47)),
                        optim.batch_size,
                        float(cfg.lambda),
                        {},
                        {},
                        {},
                        {},
                        {},
                        {},
                        {}};
    detail::StepExtra extra = [&ascent](const ConvNet& net, Gradients& grads) {
        return ascent.step(net, grads);
    };
    return detail::run_training(std::move(model), data, benign_idx, optim, cfg.epochs,
                                factor, &extra);
}

}  // namespace proiso
