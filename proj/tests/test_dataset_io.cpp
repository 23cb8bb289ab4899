#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "proiso/attacks.hpp"
#include "test_util.hpp"

using namespace proiso;
using proiso::testutil::tiny_clean;

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("proiso_test_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

PoisonedDataset sample_dataset() {
    const auto clean = tiny_clean(120, 6, 3, 8, 8, 5);
    PoisonSpec spec;
    spec.attack_kind = AttackKind::blended;
    spec.poison_rate = 0.1;
    spec.rng_seed = 12;
    return build_poisoned_dataset(clean, spec);
}

}  // namespace

TEST_CASE("save/load round-trips every field bit-exactly") {
    TempDir tmp;
    const auto ds = sample_dataset();
    save_dataset(ds, tmp.path / "ds");
    const auto back = load_dataset(tmp.path / "ds");
    CHECK(back.n == ds.n);
    CHECK(back.images == ds.images);
    CHECK(back.labels == ds.labels);
    CHECK(back.original_labels == ds.original_labels);
    CHECK(back.poison_mask == ds.poison_mask);
    CHECK(back.split == ds.split);
    CHECK(back.spec.attack_kind == ds.spec.attack_kind);
    CHECK(back.spec.poison_rate == ds.spec.poison_rate);
    CHECK(back.spec.rng_seed == ds.spec.rng_seed);
    CHECK(back.spec.blended.alpha == ds.spec.blended.alpha);
    CHECK(back.spec.blended.blend_image == ds.spec.blended.blend_image);
}

TEST_CASE("truncated image file raises a format error") {
    TempDir tmp;
    save_dataset(sample_dataset(), tmp.path / "ds");
    const auto file = tmp.path / "ds" / "images.f32";
    fs::resize_file(file, fs::file_size(file) / 2);
    CHECK_THROWS_AS(load_dataset(tmp.path / "ds"), format_error);
}

TEST_CASE("corrupted bytes raise a format error via the checksum") {
    TempDir tmp;
    save_dataset(sample_dataset(), tmp.path / "ds");
    const auto file = tmp.path / "ds" / "labels.i32";
    std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const std::int32_t garbage = 1234567;
    f.write(reinterpret_cast<const char*>(&garbage), sizeof(garbage));
    f.close();
    CHECK_THROWS_AS(load_dataset(tmp.path / "ds"), format_error);
}

TEST_CASE("schema version mismatch names both versions") {
    TempDir tmp;
    save_dataset(sample_dataset(), tmp.path / "ds");
    const auto manifest = tmp.path / "ds" / "manifest.json";
    std::ifstream in(manifest);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const auto pos = text.find("\"schema_version\": 1");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 19, "\"schema_version\": 9");
    std::ofstream(manifest) << text;
    try {
        load_dataset(tmp.path / "ds");
        FAIL("expected a format error");
    } catch (const format_error& e) {
        const std::string what = e.what();
        CHECK(what.find('9') != std::string::npos);
        CHECK(what.find('1') != std::string::npos);
    }
}

TEST_CASE("missing manifest raises a format error") {
    TempDir tmp;
    CHECK_THROWS_AS(load_dataset(tmp.path / "nowhere"), format_error);
}

TEST_CASE("subset preserves per-sample alignment") {
    const auto ds = sample_dataset();
    const std::vector<index_t> pick = {3, 7, 50};
    const auto sub = subset(ds, pick);
    CHECK(sub.n == 3);
    for (index_t k = 0; k < 3; ++k) {
        CHECK(sub.labels[std::size_t(k)] == ds.labels[std::size_t(pick[std::size_t(k)])]);
        CHECK(std::equal(sub.image(k), sub.image(k) + sub.image_size(),
                         ds.image(pick[std::size_t(k)])));
    }
}
