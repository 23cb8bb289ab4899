#include "proiso/dataset.hpp"

#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace proiso {

using nlohmann::json;

namespace {

constexpr int kDatasetSchemaVersion = 1;
constexpr const char* kDatasetSchema = "proiso.dataset";

}  // namespace

std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string to_string(AttackKind kind) {
    switch (kind) {
        case AttackKind::badnets: return "badnets";
        case AttackKind::blended: return "blended";
        case AttackKind::sig: return "sig";
    }
    throw parameter_error("unknown attack kind");
}

AttackKind attack_kind_from_string(const std::string& name) {
    if (name == "badnets") return AttackKind::badnets;
    if (name == "blended") return AttackKind::blended;
    if (name == "sig") return AttackKind::sig;
    throw parameter_error("unknown attack kind: " + name);
}

std::string to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::clean_test: return "clean_test";
        case Split::poisoned_test: return "poisoned_test";
    }
    throw parameter_error("unknown split");
}

Split split_from_string(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "clean_test") return Split::clean_test;
    if (name == "poisoned_test") return Split::poisoned_test;
    throw parameter_error("unknown split: " + name);
}

void PoisonSpec::validate(int num_classes) const {
    if (!(poison_rate >= 0.0 && poison_rate < 1.0))
        throw parameter_error("poison_rate must lie in [0, 1)");
    if (target_label < 0 || target_label >= num_classes)
        throw parameter_error("target_label out of range");
    switch (attack_kind) {
        case AttackKind::badnets:
            if (badnets.patch_h <= 0 || badnets.patch_w <= 0)
                throw parameter_error("badnets patch must be non-empty");
            break;
        case AttackKind::blended:
            if (!(blended.alpha >= 0.0f && blended.alpha <= 1.0f))
                throw parameter_error("blended alpha must lie in [0, 1]");
            break;
        case AttackKind::sig:
            if (sig.amplitude < 0.0f) throw parameter_error("sig amplitude must be >= 0");
            if (sig.frequency <= 0.0f) throw parameter_error("sig frequency must be > 0");
            break;
    }
}

index_t PoisonedDataset::poison_count() const {
    index_t c = 0;
    for (auto m : poison_mask) c += m ? 1 : 0;
    return c;
}

void PoisonedDataset::check_invariants() const {
    const index_t isz = image_size();
    if (index_t(images.size()) != n * isz) throw shape_error("images size mismatch");
    if (index_t(labels.size()) != n || index_t(original_labels.size()) != n ||
        index_t(poison_mask.size()) != n)
        throw shape_error("per-sample array size mismatch");
    for (index_t i = 0; i < n; ++i) {
        if (poison_mask[i] && labels[i] != spec.target_label)
            throw shape_error("poisoned sample does not carry the target label");
    }
    if (split == Split::poisoned_test) {
        for (index_t i = 0; i < n; ++i) {
            if (original_labels[i] == spec.target_label)
                throw shape_error("poisoned test set contains a target-class original");
        }
    }
}

PoisonedDataset wrap_clean(const CleanDataset& clean, Split split) {
    PoisonedDataset ds;
    ds.n = clean.n;
    ds.channels = clean.channels;
    ds.height = clean.height;
    ds.width = clean.width;
    ds.num_classes = clean.num_classes;
    ds.images = clean.images;
    ds.labels = clean.labels;
    ds.original_labels = clean.labels;
    ds.poison_mask.assign(std::size_t(clean.n), 0);
    ds.spec.poison_rate = 0.0;
    ds.split = split;
    return ds;
}

PoisonedDataset subset(const PoisonedDataset& ds, std::span<const index_t> indices) {
    PoisonedDataset out;
    out.n = index_t(indices.size());
    out.channels = ds.channels;
    out.height = ds.height;
    out.width = ds.width;
    out.num_classes = ds.num_classes;
    out.spec = ds.spec;
    out.split = ds.split;
    const index_t isz = ds.image_size();
    out.images.resize(std::size_t(out.n) * isz);
    out.labels.resize(out.n);
    out.original_labels.resize(out.n);
    out.poison_mask.resize(out.n);
    for (index_t k = 0; k < out.n; ++k) {
        index_t i = indices[std::size_t(k)];
        if (i < 0 || i >= ds.n) throw std::domain_error("subset index out of range");
        std::copy(ds.image(i), ds.image(i) + isz, out.image(k));
        out.labels[k] = ds.labels[i];
        out.original_labels[k] = ds.original_labels[i];
        out.poison_mask[k] = ds.poison_mask[i];
    }
    return out;
}

namespace {

template <typename T>
void write_raw(const std::filesystem::path& file, const std::vector<T>& v) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw format_error("cannot open for writing: " + file.string());
    out.write(reinterpret_cast<const char*>(v.data()),
              std::streamsize(v.size() * sizeof(T)));
    if (!out) throw format_error("short write: " + file.string());
}

template <typename T>
std::vector<T> read_raw(const std::filesystem::path& file, std::size_t count) {
    std::ifstream in(file, std::ios::binary | std::ios::ate);
    if (!in) throw format_error("cannot open: " + file.string());
    const auto bytes = std::size_t(in.tellg());
    if (bytes != count * sizeof(T))
        throw format_error(file.string() + ": expected " +
                           std::to_string(count * sizeof(T)) + " bytes, found " +
                           std::to_string(bytes));
    std::vector<T> v(count);
    in.seekg(0);
    in.read(reinterpret_cast<char*>(v.data()), std::streamsize(bytes));
    if (!in) throw format_error("short read: " + file.string());
    return v;
}

json spec_to_json(const PoisonSpec& s) {
    json j;
    j["attack_kind"] = to_string(s.attack_kind);
    j["poison_rate"] = s.poison_rate;
    j["target_label"] = s.target_label;
    j["rng_seed"] = s.rng_seed;
    j["badnets"] = {{"patch_h", s.badnets.patch_h}, {"patch_w", s.badnets.patch_w},
                    {"top", s.badnets.top},         {"left", s.badnets.left},
                    {"pixel_value", s.badnets.pixel_value}};
    j["blended"] = {{"alpha", s.blended.alpha},
                    {"blend_image_len", s.blended.blend_image.size()}};
    j["sig"] = {{"amplitude", s.sig.amplitude}, {"frequency", s.sig.frequency}};
    return j;
}

PoisonSpec spec_from_json(const json& j) {
    PoisonSpec s;
    s.attack_kind = attack_kind_from_string(j.at("attack_kind").get<std::string>());
    s.poison_rate = j.at("poison_rate").get<double>();
    s.target_label = j.at("target_label").get<int>();
    s.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    const json& b = j.at("badnets");
    s.badnets.patch_h = b.at("patch_h").get<int>();
    s.badnets.patch_w = b.at("patch_w").get<int>();
    s.badnets.top = b.at("top").get<int>();
    s.badnets.left = b.at("left").get<int>();
    s.badnets.pixel_value = b.at("pixel_value").get<float>();
    s.blended.alpha = j.at("blended").at("alpha").get<float>();
    s.sig.amplitude = j.at("sig").at("amplitude").get<float>();
    s.sig.frequency = j.at("sig").at("frequency").get<float>();
    return s;
}

}  // namespace

void save_dataset(const PoisonedDataset& ds, const std::filesystem::path& dir) {
    ds.check_invariants();
    std::filesystem::create_directories(dir);
    write_raw(dir / "images.f32", ds.images);
    write_raw(dir / "labels.i32", ds.labels);
    write_raw(dir / "original_labels.i32", ds.original_labels);
    write_raw(dir / "poison_mask.u8", ds.poison_mask);

    json j;
    j["schema"] = kDatasetSchema;
    j["schema_version"] = kDatasetSchemaVersion;
    j["byte_order"] = "little-endian";
    j["split"] = to_string(ds.split);
    j["n"] = ds.n;
    j["channels"] = ds.channels;
    j["height"] = ds.height;
    j["width"] = ds.width;
    j["num_classes"] = ds.num_classes;
    j["spec"] = spec_to_json(ds.spec);
    j["checksums"] = {
        {"images", to_hex(fnv1a64(ds.images.data(), ds.images.size() * sizeof(float)))},
        {"labels", to_hex(fnv1a64(ds.labels.data(), ds.labels.size() * sizeof(std::int32_t)))},
        {"original_labels",
         to_hex(fnv1a64(ds.original_labels.data(), ds.original_labels.size() * sizeof(std::int32_t)))},
        {"poison_mask", to_hex(fnv1a64(ds.poison_mask.data(), ds.poison_mask.size()))}};
    if (!ds.spec.blended.blend_image.empty())
        write_raw(dir / "blend_image.f32", ds.spec.blended.blend_image);

    std::ofstream out(dir / "manifest.json");
    if (!out) throw format_error("cannot write manifest under " + dir.string());
    out << j.dump(2) << "\n";
}

PoisonedDataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw format_error("missing manifest under " + dir.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw format_error("bad manifest under " + dir.string() + ": " + e.what());
    }
    try {
        if (j.at("schema").get<std::string>() != kDatasetSchema)
            throw format_error("not a dataset directory: " + dir.string());
        const int version = j.at("schema_version").get<int>();
        if (version != kDatasetSchemaVersion)
            throw format_error("dataset schema version " + std::to_string(version) +
                               " unsupported (expected " +
                               std::to_string(kDatasetSchemaVersion) + ")");

        PoisonedDataset ds;
        ds.split = split_from_string(j.at("split").get<std::string>());
        ds.n = j.at("n").get<index_t>();
        ds.channels = j.at("channels").get<int>();
        ds.height = j.at("height").get<int>();
        ds.width = j.at("width").get<int>();
        ds.num_classes = j.at("num_classes").get<int>();
        ds.spec = spec_from_json(j.at("spec"));

        const auto count = std::size_t(ds.n);
        ds.images = read_raw<float>(dir / "images.f32", count * std::size_t(ds.image_size()));
        ds.labels = read_raw<std::int32_t>(dir / "labels.i32", count);
        ds.original_labels = read_raw<std::int32_t>(dir / "original_labels.i32", count);
        ds.poison_mask = read_raw<std::uint8_t>(dir / "poison_mask.u8", count);
        const auto blend_len = j.at("spec").at("blended").at("blend_image_len").get<std::size_t>();
        if (blend_len > 0)
            ds.spec.blended.blend_image = read_raw<float>(dir / "blend_image.f32", blend_len);

        const json& sums = j.at("checksums");
        auto check = [&](const char* key, std::uint64_t actual) {
            if (sums.at(key).get<std::string>() != to_hex(actual))
                throw format_error(std::string("checksum mismatch for ") + key +
                                   " under " + dir.string());
        };
        check("images", fnv1a64(ds.images.data(), ds.images.size() * sizeof(float)));
        check("labels", fnv1a64(ds.labels.data(), ds.labels.size() * sizeof(std::int32_t)));
        check("original_labels",
              fnv1a64(ds.original_labels.data(), ds.original_labels.size() * sizeof(std::int32_t)));
        check("poison_mask", fnv1a64(ds.poison_mask.data(), ds.poison_mask.size()));

        ds.check_invariants();
        return ds;
    } catch (const json::exception& e) {
        throw format_error("bad manifest under " + dir.string() + ": " + e.what());
    }
}

}  // namespace proiso
