#include "proiso/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace proiso {

namespace {

std::vector<float> make_blend_image(std::uint64_t seed, index_t len) {
    // Stream id keeps the pattern independent of the poison-selection draws.
    std::mt19937_64 rng(derive_seed(seed, 0xb1e4d));
    std::vector<float> img(static_cast<std::size_t>(len));
    for (auto& v : img) v = float(uniform01(rng));
    return img;
}

void apply_badnets(float* image, int channels, int height, int width,
                   const BadnetsParams& p) {
    const int top = p.top >= 0 ? p.top : height - p.patch_h;
    const int left = p.left >= 0 ? p.left : width - p.patch_w;
    if (top < 0 || left < 0 || top + p.patch_h > height || left + p.patch_w > width)
        throw geometry_error("badnets patch exceeds image bounds");
    for (int c = 0; c < channels; ++c) {
        float* plane = image + std::size_t(c) * height * width;
        for (int y = top; y < top + p.patch_h; ++y)
            std::fill(plane + y * width + left, plane + y * width + left + p.patch_w,
                      p.pixel_value);
    }
}

void apply_blended(float* image, index_t len, const BlendedParams& p) {
    if (!(p.alpha >= 0.0f && p.alpha <= 1.0f))
        throw parameter_error("blended alpha must lie in [0, 1]");
    if (index_t(p.blend_image.size()) != len)
        throw shape_error("blend image does not match image shape");
    for (index_t i = 0; i < len; ++i) {
        float v = (1.0f - p.alpha) * image[i] + p.alpha * p.blend_image[i];
        image[i] = std::clamp(v, 0.0f, 1.0f);
    }
}

void apply_sig(float* image, int channels, int height, int width, const SigParams& p) {
    if (p.amplitude < 0.0f) throw parameter_error("sig amplitude must be >= 0");
    for (int x = 0; x < width; ++x) {
        const float delta =
            p.amplitude * std::sin(2.0f * std::numbers::pi_v<float> * p.frequency * (float(x) / float(width)));
        for (int c = 0; c < channels; ++c) {
            float* plane = image + std::size_t(c) * height * width;
            for (int y = 0; y < height; ++y)
                plane[y * width + x] = std::clamp(plane[y * width + x] + delta, 0.0f, 1.0f);
        }
    }
}

}  // namespace

PoisonSpec resolve_trigger_params(const PoisonSpec& spec, int channels, int height,
                                  int width) {
    PoisonSpec out = spec;
    if (out.attack_kind == AttackKind::blended && out.blended.blend_image.empty())
        out.blended.blend_image =
            make_blend_image(out.rng_seed, index_t(channels) * height * width);
    return out;
}

void inject_trigger_inplace(float* image, int channels, int height, int width,
                            const PoisonSpec& spec) {
    switch (spec.attack_kind) {
        case AttackKind::badnets:
            apply_badnets(image, channels, height, width, spec.badnets);
            return;
        case AttackKind::blended: {
            const index_t len = index_t(channels) * height * width;
            if (spec.blended.blend_image.empty()) {
                BlendedParams p = spec.blended;
                p.blend_image = make_blend_image(spec.rng_seed, len);
                apply_blended(image, len, p);
            } else {
                apply_blended(image, len, spec.blended);
            }
            return;
        }
        case AttackKind::sig:
            apply_sig(image, channels, height, width, spec.sig);
            return;
    }
    throw parameter_error("unknown attack kind");
}

std::vector<float> inject_trigger(const std::vector<float>& image, int channels,
                                  int height, int width, const PoisonSpec& spec) {
    if (index_t(image.size()) != index_t(channels) * height * width)
        throw shape_error("image size does not match declared dims");
    std::vector<float> out = image;
    inject_trigger_inplace(out.data(), channels, height, width, spec);
    return out;
}

PoisonedDataset build_poisoned_dataset(const CleanDataset& clean, const PoisonSpec& raw_spec) {
    raw_spec.validate(clean.num_classes);
    const PoisonSpec spec =
        resolve_trigger_params(raw_spec, clean.channels, clean.height, clean.width);

    PoisonedDataset ds = wrap_clean(clean, Split::train);
    ds.spec = spec;

    std::vector<index_t> pool;
    if (spec.attack_kind == AttackKind::sig) {
        for (index_t i = 0; i < clean.n; ++i)
            if (clean.labels[i] == spec.target_label) pool.push_back(i);
        if (pool.empty() && spec.poison_rate > 0.0)
            throw parameter_error("sig: no target-class samples available to poison");
    } else {
        pool.resize(std::size_t(clean.n));
        for (index_t i = 0; i < clean.n; ++i) pool[std::size_t(i)] = i;
    }

    // Clean-label attacks draw from (and floor against) the target class only.
    // The nudge keeps floor() exact when rate * n lands on an integer that
    // binary decimals represent fractionally low (0.3 * 10, ...).
    const index_t want =
        index_t(std::floor(spec.poison_rate * double(pool.size()) + 1e-9));
    if (want > index_t(pool.size()))
        throw parameter_error("poison count exceeds available samples");

    std::mt19937_64 rng(derive_seed(spec.rng_seed, 0x5e1ec7));
    fisher_yates_shuffle(pool, rng);
    pool.resize(std::size_t(want));
    std::sort(pool.begin(), pool.end());

    for (index_t i : pool) {
        inject_trigger_inplace(ds.image(i), ds.channels, ds.height, ds.width, spec);
        ds.labels[i] = spec.target_label;
        ds.poison_mask[i] = 1;
    }
    ds.check_invariants();
    return ds;
}

PoisonedDataset build_poisoned_testset(const CleanDataset& clean_test, const PoisonSpec& raw_spec) {
    raw_spec.validate(clean_test.num_classes);
    const PoisonSpec spec =
        resolve_trigger_params(raw_spec, clean_test.channels, clean_test.height, clean_test.width);

    PoisonedDataset ds;
    ds.channels = clean_test.channels;
    ds.height = clean_test.height;
    ds.width = clean_test.width;
    ds.num_classes = clean_test.num_classes;
    ds.spec = spec;
    ds.split = Split::poisoned_test;

    const index_t isz = clean_test.image_size();
    for (index_t i = 0; i < clean_test.n; ++i) {
        if (clean_test.labels[i] == spec.target_label) continue;
        ds.images.insert(ds.images.end(), clean_test.image(i), clean_test.image(i) + isz);
        inject_trigger_inplace(ds.images.data() + std::size_t(ds.n) * isz, ds.channels,
                               ds.height, ds.width, spec);
        ds.labels.push_back(spec.target_label);
        ds.original_labels.push_back(clean_test.labels[i]);
        ds.poison_mask.push_back(1);
        ++ds.n;
    }
    ds.check_invariants();
    return ds;
}

}  // namespace proiso
