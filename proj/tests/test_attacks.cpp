#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "proiso/attacks.hpp"
#include "test_util.hpp"

using namespace proiso;
using proiso::testutil::tiny_clean;

namespace {

PoisonSpec badnets_spec(int ph = 2, int pw = 2) {
    PoisonSpec spec;
    spec.attack_kind = AttackKind::badnets;
    spec.badnets.patch_h = ph;
    spec.badnets.patch_w = pw;
    spec.badnets.pixel_value = 1.0f;
    return spec;
}

}  // namespace

TEST_CASE("badnets patch replaces exactly the patch region") {
    std::vector<float> img(8 * 8, 0.0f);
    const auto out = inject_trigger(img, 1, 8, 8, badnets_spec(2, 2));
    int ones = 0;
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            const float v = out[std::size_t(y * 8 + x)];
            if (y >= 6 && x >= 6) {
                CHECK(v == 1.0f);
                ++ones;
            } else {
                CHECK(v == 0.0f);
            }
        }
    CHECK(ones == 4);
}

TEST_CASE("badnets injection is idempotent") {
    auto clean = tiny_clean(1, 2, 3, 8, 8, 7);
    const auto spec = badnets_spec(3, 3);
    const auto once = inject_trigger(clean.images, 3, 8, 8, spec);
    const auto twice = inject_trigger(once, 3, 8, 8, spec);
    CHECK(once == twice);
}

TEST_CASE("badnets difference is confined to the patch") {
    auto clean = tiny_clean(1, 2, 3, 8, 8, 3);
    const auto out = inject_trigger(clean.images, 3, 8, 8, badnets_spec(3, 3));
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
                const std::size_t i = std::size_t((c * 8 + y) * 8 + x);
                if (y >= 5 && x >= 5)
                    CHECK(out[i] == 1.0f);
                else
                    CHECK(out[i] == clean.images[i]);
            }
}

TEST_CASE("patch exceeding bounds raises a geometry error") {
    std::vector<float> img(4 * 4, 0.0f);
    CHECK_THROWS_AS(inject_trigger(img, 1, 4, 4, badnets_spec(5, 2)), geometry_error);
    auto spec = badnets_spec(2, 2);
    spec.badnets.top = 3;  // 3 + 2 > 4
    CHECK_THROWS_AS(inject_trigger(img, 1, 4, 4, spec), geometry_error);
}

TEST_CASE("blended with alpha 0 is the identity") {
    auto clean = tiny_clean(1, 2, 3, 8, 8, 11);
    PoisonSpec spec;
    spec.attack_kind = AttackKind::blended;
    spec.blended.alpha = 0.0f;
    const auto out = inject_trigger(clean.images, 3, 8, 8, spec);
    CHECK(out == clean.images);
}

TEST_CASE("blended alpha outside [0,1] raises a parameter error") {
    std::vector<float> img(3 * 8 * 8, 0.5f);
    PoisonSpec spec;
    spec.attack_kind = AttackKind::blended;
    spec.blended.alpha = 1.5f;
    CHECK_THROWS_AS(inject_trigger(img, 3, 8, 8, spec), parameter_error);
}

TEST_CASE("sig with amplitude 0 is the identity") {
    auto clean = tiny_clean(1, 2, 1, 8, 8, 13);
    PoisonSpec spec;
    spec.attack_kind = AttackKind::sig;
    spec.sig.amplitude = 0.0f;
    const auto out = inject_trigger(clean.images, 1, 8, 8, spec);
    CHECK(out == clean.images);
}

TEST_CASE("poison count is floor(rate * n) and labels are rewritten") {
    const auto clean = tiny_clean(1000, 10, 1, 8, 8, 17);
    PoisonSpec spec = badnets_spec();
    spec.poison_rate = 0.05;
    spec.target_label = 0;
    const auto ds = build_poisoned_dataset(clean, spec);
    CHECK(ds.poison_count() == 50);
    for (index_t i = 0; i < ds.n; ++i) {
        if (ds.poison_mask[std::size_t(i)]) {
            CHECK(ds.labels[std::size_t(i)] == 0);
            CHECK(ds.original_labels[std::size_t(i)] == clean.labels[std::size_t(i)]);
        } else {
            CHECK(ds.labels[std::size_t(i)] == clean.labels[std::size_t(i)]);
        }
    }
}

TEST_CASE("zero rate keeps the dataset byte-identical") {
    const auto clean = tiny_clean(100, 4, 3, 8, 8, 19);
    PoisonSpec spec = badnets_spec();
    spec.poison_rate = 0.0;
    const auto ds = build_poisoned_dataset(clean, spec);
    CHECK(ds.poison_count() == 0);
    CHECK(ds.images == clean.images);
    CHECK(ds.labels == clean.labels);
}

TEST_CASE("same seed twice gives bit-identical datasets") {
    const auto clean = tiny_clean(400, 10, 3, 8, 8, 23);
    PoisonSpec spec;
    spec.attack_kind = AttackKind::blended;
    spec.poison_rate = 0.1;
    spec.rng_seed = 99;
    const auto a = build_poisoned_dataset(clean, spec);
    const auto b = build_poisoned_dataset(clean, spec);
    CHECK(a.images == b.images);
    CHECK(a.labels == b.labels);
    CHECK(a.poison_mask == b.poison_mask);
    CHECK(a.spec.blended.blend_image == b.spec.blended.blend_image);
}

TEST_CASE("sig poisons only target-class samples and keeps labels") {
    const auto clean = tiny_clean(500, 10, 1, 8, 8, 29);
    PoisonSpec spec;
    spec.attack_kind = AttackKind::sig;
    spec.poison_rate = 0.08;
    spec.target_label = 3;
    const auto ds = build_poisoned_dataset(clean, spec);
    index_t target_count = 0;
    for (auto l : clean.labels) target_count += (l == 3) ? 1 : 0;
    CHECK(ds.poison_count() == index_t(0.08 * double(target_count)));
    for (index_t i = 0; i < ds.n; ++i) {
        CHECK(ds.labels[std::size_t(i)] == clean.labels[std::size_t(i)]);
        if (ds.poison_mask[std::size_t(i)]) CHECK(ds.original_labels[std::size_t(i)] == 3);
    }
}

TEST_CASE("poisoned test set excludes target-class originals") {
    const auto clean = tiny_clean(1000, 10, 1, 8, 8, 31);
    PoisonSpec spec = badnets_spec();
    spec.target_label = 0;
    const auto ds = build_poisoned_testset(clean, spec);
    CHECK(ds.n == 900);
    for (index_t i = 0; i < ds.n; ++i) {
        CHECK(ds.original_labels[std::size_t(i)] != 0);
        CHECK(ds.labels[std::size_t(i)] == 0);
        CHECK(ds.poison_mask[std::size_t(i)] == 1);
    }
}

TEST_CASE("poisoned test set with alpha 0 matches the clean images") {
    const auto clean = tiny_clean(60, 3, 3, 8, 8, 37);
    PoisonSpec spec;
    spec.attack_kind = AttackKind::blended;
    spec.blended.alpha = 0.0f;
    spec.target_label = 1;
    const auto ds = build_poisoned_testset(clean, spec);
    index_t k = 0;
    for (index_t i = 0; i < clean.n; ++i) {
        if (clean.labels[std::size_t(i)] == 1) continue;
        CHECK(std::equal(clean.image(i), clean.image(i) + clean.image_size(), ds.image(k)));
        ++k;
    }
}

TEST_CASE("poisoned test set carries the patch verbatim") {
    const auto clean = tiny_clean(50, 5, 1, 8, 8, 41);
    const auto spec = badnets_spec(3, 3);
    const auto ds = build_poisoned_testset(clean, spec);
    for (index_t i = 0; i < ds.n; ++i)
        for (int y = 5; y < 8; ++y)
            for (int x = 5; x < 8; ++x) CHECK(ds.image(i)[y * 8 + x] == 1.0f);
}

TEST_CASE("invalid specs are rejected") {
    PoisonSpec spec = badnets_spec();
    spec.poison_rate = 1.0;
    CHECK_THROWS_AS(spec.validate(10), parameter_error);
    spec.poison_rate = 0.05;
    spec.target_label = 10;
    CHECK_THROWS_AS(spec.validate(10), parameter_error);
}
