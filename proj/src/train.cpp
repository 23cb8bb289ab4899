#include "proiso/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "train_internal.hpp"

namespace proiso {

std::string to_string(LrSchedule s) {
    return s == LrSchedule::constant ? "constant" : "step";
}

LrSchedule lr_schedule_from_string(const std::string& name) {
    if (name == "constant") return LrSchedule::constant;
    if (name == "step") return LrSchedule::step;
    throw parameter_error("unknown lr schedule: " + name);
}

void TrainConfig::validate() const {
    if (epochs < 1) throw parameter_error("epochs must be >= 1");
    if (batch_size < 1) throw parameter_error("batch_size must be >= 1");
    if (learning_rate <= 0.0) throw parameter_error("learning_rate must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw parameter_error("momentum must lie in [0, 1)");
    if (weight_decay < 0.0) throw parameter_error("weight_decay must be >= 0");
    if (crop_padding < 0) throw parameter_error("crop_padding must be >= 0");
}

namespace detail {

float scheduled_lr(const TrainConfig& cfg, int epoch, int total_epochs) {
    float lr = float(cfg.learning_rate);
    if (cfg.lr_schedule == LrSchedule::step) {
        if (epoch >= (3 * total_epochs) / 4)
            lr *= 0.01f;
        else if (epoch >= total_epochs / 2)
            lr *= 0.1f;
    }
    return lr;
}

void gather_batch(const PoisonedDataset& data, std::span<const index_t> idx,
                  const TrainConfig& cfg, bool augment, std::mt19937_64& rng,
                  std::vector<float>& images, std::vector<std::int32_t>& labels) {
    const int c = data.channels, h = data.height, w = data.width;
    const index_t isz = data.image_size();
    images.resize(idx.size() * std::size_t(isz));
    labels.resize(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const index_t i = idx[k];
        float* dst = images.data() + k * std::size_t(isz);
        labels[k] = data.labels[std::size_t(i)];

        int dy = 0, dx = 0;
        bool flip = false;
        if (augment && cfg.augment_flip) flip = (rng() & 1u) != 0;
        if (augment && cfg.augment_crop && cfg.crop_padding > 0) {
            dy = int(bounded_rand(rng, std::uint64_t(2 * cfg.crop_padding + 1))) - cfg.crop_padding;
            dx = int(bounded_rand(rng, std::uint64_t(2 * cfg.crop_padding + 1))) - cfg.crop_padding;
        }
        const float* src = data.image(i);
        if (!flip && dy == 0 && dx == 0) {
            std::memcpy(dst, src, std::size_t(isz) * sizeof(float));
            continue;
        }
        // Shift acts like zero padding + crop; flip mirrors x.
        for (int ch = 0; ch < c; ++ch) {
            const float* sp = src + std::size_t(ch) * h * w;
            float* dp = dst + std::size_t(ch) * h * w;
            for (int y = 0; y < h; ++y) {
                const int sy = y + dy;
                for (int x = 0; x < w; ++x) {
                    const int xx = flip ? (w - 1 - x) : x;
                    const int sx = xx + dx;
                    dp[y * w + x] = (sy >= 0 && sy < h && sx >= 0 && sx < w)
                                        ? sp[sy * w + sx]
                                        : 0.0f;
                }
            }
        }
    }
}

ConvNet run_training(ConvNet model, const PoisonedDataset& data,
                     std::span<const index_t> indices, const TrainConfig& cfg, int epochs,
                     const std::function<float(float ce)>& factor_of,
                     const StepExtra* extra) {
    cfg.validate();
    if (indices.empty()) throw std::domain_error("training on an empty index set");
    if (data.channels != model.arch().in_channels || data.height != model.arch().in_h ||
        data.width != model.arch().in_w)
        throw shape_error("dataset shape does not match the model architecture");

    std::mt19937_64 shuffle_rng(derive_seed(cfg.rng_seed, 1));
    std::mt19937_64 augment_rng(derive_seed(cfg.rng_seed, 2));

    std::vector<index_t> order(indices.begin(), indices.end());
    ForwardState state;
    Gradients grads;
    grads.match(model);
    SgdState opt;
    std::vector<float> batch_images, ce, weights, dlogits;
    std::vector<std::int32_t> batch_labels;
    const int K = model.arch().num_classes;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        fisher_yates_shuffle(order, shuffle_rng);
        SgdConfig sgd{scheduled_lr(cfg, epoch, epochs), float(cfg.momentum),
                      float(cfg.weight_decay)};
        const index_t nbatches =
            (index_t(order.size()) + cfg.batch_size - 1) / cfg.batch_size;
        for (index_t bi = 0; bi < nbatches; ++bi) {
            const std::size_t lo = std::size_t(bi) * cfg.batch_size;
            const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
            const int bsz = int(hi - lo);
            gather_batch(data, {order.data() + lo, std::size_t(bsz)}, cfg, true,
                         augment_rng, batch_images, batch_labels);

            forward_batch(model, batch_images.data(), bsz, state, true);
            ce.resize(std::size_t(bsz));
            weights.resize(std::size_t(bsz));
            dlogits.resize(std::size_t(bsz) * K);
            softmax_xent(state.logits.data(), bsz, K, batch_labels.data(), ce.data(),
                         nullptr, nullptr);
            double loss = 0.0;
            for (int i = 0; i < bsz; ++i) {
                const float a = factor_of(ce[std::size_t(i)]);
                weights[std::size_t(i)] = a / float(bsz);
                loss += double(a) * ce[std::size_t(i)] / bsz;
            }
            softmax_xent(state.logits.data(), bsz, K, batch_labels.data(), nullptr,
                         dlogits.data(), weights.data());

            grads.zero();
            backward_batch(model, state, dlogits, grads);
            if (extra && *extra) loss += (*extra)(model, grads);

            if (!std::isfinite(loss))
                throw divergence_error(epoch, int(bi),
                                       "non-finite loss at epoch " + std::to_string(epoch) +
                                           ", batch " + std::to_string(bi));
            sgd_step(model, grads, opt, sgd);
        }
    }
    return model;
}

}  // namespace detail

ConvNet train_standard(ConvNet model, const PoisonedDataset& data, const TrainConfig& cfg) {
    std::vector<index_t> all(static_cast<std::size_t>(data.n));
    for (index_t i = 0; i < data.n; ++i) all[std::size_t(i)] = i;
    auto factor = [](float) { return 1.0f; };
    return detail::run_training(std::move(model), data, all, cfg, cfg.epochs, factor, nullptr);
}

namespace {

constexpr int kEvalBatch = 256;

template <typename Fn>
void eval_batches(const ConvNet& model, const PoisonedDataset& data, Fn&& per_batch) {
    if (data.n == 0) throw std::domain_error("empty dataset");
    if (data.channels != model.arch().in_channels || data.height != model.arch().in_h ||
        data.width != model.arch().in_w)
        throw shape_error("dataset shape does not match the model architecture");
    ForwardState state;
    const index_t isz = data.image_size();
    for (index_t lo = 0; lo < data.n; lo += kEvalBatch) {
        const int bsz = int(std::min<index_t>(kEvalBatch, data.n - lo));
        forward_batch(model, data.images.data() + std::size_t(lo) * isz, bsz, state, false);
        per_batch(state, lo, bsz);
    }
}

}  // namespace

double evaluate(const ConvNet& model, const PoisonedDataset& data) {
    index_t correct = 0;
    const int K = model.arch().num_classes;
    eval_batches(model, data, [&](const ForwardState& st, index_t lo, int bsz) {
        for (int b = 0; b < bsz; ++b) {
            const int pred = argmax_row(st.logits.data() + std::size_t(b) * K, K);
            if (pred == data.labels[std::size_t(lo + b)]) ++correct;
        }
    });
    return double(correct) / double(data.n);
}

std::vector<float> per_sample_losses(const ConvNet& model, const PoisonedDataset& data) {
    std::vector<float> losses(static_cast<std::size_t>(data.n));
    const int K = model.arch().num_classes;
    eval_batches(model, data, [&](const ForwardState& st, index_t lo, int bsz) {
        softmax_xent(st.logits.data(), bsz, K, data.labels.data() + lo,
                     losses.data() + lo, nullptr, nullptr);
    });
    return losses;
}

std::vector<std::int32_t> predict(const ConvNet& model, const PoisonedDataset& data) {
    std::vector<std::int32_t> preds(static_cast<std::size_t>(data.n));
    const int K = model.arch().num_classes;
    eval_batches(model, data, [&](const ForwardState& st, index_t lo, int bsz) {
        for (int b = 0; b < bsz; ++b)
            preds[std::size_t(lo + b)] =
                argmax_row(st.logits.data() + std::size_t(b) * K, K);
    });
    return preds;
}

}  // namespace proiso
