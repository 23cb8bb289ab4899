#include "proiso/features.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace proiso {

using nlohmann::json;

std::string to_string(Pooling p) {
    return p == Pooling::spatial_max ? "spatial_max" : "spatial_mean";
}

Pooling pooling_from_string(const std::string& name) {
    if (name == "spatial_max") return Pooling::spatial_max;
    if (name == "spatial_mean") return Pooling::spatial_mean;
    throw parameter_error("unknown pooling mode: " + name);
}

void FeatureBank::check_invariants() const {
    if (layer_offsets.size() != layer_channels.size() + 1)
        throw shape_error("layer offsets do not match layer count");
    if (layer_offsets.front() != 0) throw shape_error("layer offsets must start at 0");
    for (std::size_t l = 0; l < layer_channels.size(); ++l)
        if (layer_offsets[l + 1] - layer_offsets[l] != layer_channels[l])
            throw shape_error("layer offsets do not partition the columns");
    if (index_t(values.size()) != n * total_channels())
        throw shape_error("feature matrix size mismatch");
    for (float v : values)
        if (!std::isfinite(v)) throw shape_error("non-finite feature value");
}

FeatureBank extract_features(const ConvNet& model, const PoisonedDataset& data,
                             Pooling pooling) {
    if (data.n == 0) throw std::domain_error("empty dataset");
    const ArchDescriptor& arch = model.arch();
    if (data.channels != arch.in_channels || data.height != arch.in_h ||
        data.width != arch.in_w)
        throw shape_error("dataset shape does not match the model architecture");

    FeatureBank bank;
    bank.n = data.n;
    bank.pooling = pooling;
    bank.layer_channels = arch.block_channels;
    bank.layer_offsets.push_back(0);
    for (int c : arch.block_channels) bank.layer_offsets.push_back(bank.layer_offsets.back() + c);
    const int total = bank.total_channels();
    bank.values.assign(std::size_t(data.n) * total, 0.0f);

    constexpr int kBatch = 256;
    ForwardState state;
    const index_t isz = data.image_size();
    for (index_t lo = 0; lo < data.n; lo += kBatch) {
        const int bsz = int(std::min<index_t>(kBatch, data.n - lo));
        forward_batch(model, data.images.data() + std::size_t(lo) * isz, bsz, state, false);
        for (int l = 0; l < arch.num_blocks(); ++l) {
            const auto& d = state.dims[std::size_t(l)];
            const std::size_t hw = std::size_t(d.h2) * d.w2;
            const float* pooled = block_output(state, l);
            const int off = bank.layer_offsets[std::size_t(l)];
            for (int f = 0; f < d.out_c; ++f) {
                for (int b = 0; b < bsz; ++b) {
                    const float* plane = pooled + (std::size_t(f) * bsz + b) * hw;
                    float v;
                    if (pooling == Pooling::spatial_max) {
                        v = plane[0];
                        for (std::size_t p = 1; p < hw; ++p) v = std::max(v, plane[p]);
                    } else {
                        double acc = 0.0;
                        for (std::size_t p = 0; p < hw; ++p) acc += plane[p];
                        v = float(acc / double(hw));
                    }
                    bank.values[std::size_t(lo + b) * total + off + f] = v;
                }
            }
        }
    }
    bank.check_invariants();
    return bank;
}

namespace {
constexpr int kBankSchemaVersion = 1;
}

void save_feature_bank(const FeatureBank& bank, const std::filesystem::path& dir) {
    bank.check_invariants();
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "features.f32", std::ios::binary);
        if (!out) throw format_error("cannot write feature matrix under " + dir.string());
        out.write(reinterpret_cast<const char*>(bank.values.data()),
                  std::streamsize(bank.values.size() * sizeof(float)));
        if (!out) throw format_error("short write under " + dir.string());
    }
    json j;
    j["schema"] = "proiso.feature_bank";
    j["schema_version"] = kBankSchemaVersion;
    j["n"] = bank.n;
    j["layer_channels"] = bank.layer_channels;
    j["layer_offsets"] = bank.layer_offsets;
    j["pooling"] = to_string(bank.pooling);
    j["checksum"] = to_hex(fnv1a64(bank.values.data(), bank.values.size() * sizeof(float)));
    std::ofstream out(dir / "manifest.json");
    if (!out) throw format_error("cannot write manifest under " + dir.string());
    out << j.dump(2) << "\n";
}

FeatureBank load_feature_bank(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw format_error("missing manifest under " + dir.string());
    json j;
    try {
        in >> j;
        if (j.at("schema").get<std::string>() != "proiso.feature_bank")
            throw format_error("not a feature bank: " + dir.string());
        const int version = j.at("schema_version").get<int>();
        if (version != kBankSchemaVersion)
            throw format_error("feature bank schema version " + std::to_string(version) +
                               " unsupported (expected " + std::to_string(kBankSchemaVersion) + ")");
        FeatureBank bank;
        bank.n = j.at("n").get<index_t>();
        bank.layer_channels = j.at("layer_channels").get<std::vector<int>>();
        bank.layer_offsets = j.at("layer_offsets").get<std::vector<int>>();
        bank.pooling = pooling_from_string(j.at("pooling").get<std::string>());

        std::ifstream fin(dir / "features.f32", std::ios::binary | std::ios::ate);
        if (!fin) throw format_error("missing features.f32 under " + dir.string());
        const auto bytes = std::size_t(fin.tellg());
        const std::size_t expect =
            std::size_t(bank.n) * std::size_t(bank.layer_offsets.back()) * sizeof(float);
        if (bytes != expect)
            throw format_error("feature matrix truncated under " + dir.string());
        bank.values.resize(expect / sizeof(float));
        fin.seekg(0);
        fin.read(reinterpret_cast<char*>(bank.values.data()), std::streamsize(bytes));
        if (!fin) throw format_error("short read under " + dir.string());
        if (j.at("checksum").get<std::string>() !=
            to_hex(fnv1a64(bank.values.data(), bank.values.size() * sizeof(float))))
            throw format_error("feature matrix checksum mismatch under " + dir.string());
        bank.check_invariants();
        return bank;
    } catch (const json::exception& e) {
        throw format_error("bad manifest under " + dir.string() + ": " + e.what());
    }
}

}  // namespace proiso
