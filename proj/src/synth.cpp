#include "proiso/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

namespace proiso {

namespace {

struct ShapeCtx {
    int h, w;
    float cx, cy;     // center, pixels
    float scale;      // characteristic radius, pixels
    int period;       // stripe/checker period
    int phase;
};

// One predicate per class; returns whether (y, x) belongs to the foreground.
bool in_shape(int cls, int y, int x, const ShapeCtx& s) {
    const float dx = float(x) - s.cx;
    const float dy = float(y) - s.cy;
    const float r = std::sqrt(dx * dx + dy * dy);
    const float bar = std::max(1.5f, 0.22f * s.scale);
    switch (cls) {
        case 0: return r < s.scale;                                     // disk
        case 1: return std::abs(r - s.scale) < bar * 0.8f;              // ring
        case 2: return std::abs(dx) < s.scale && std::abs(dy) < s.scale;        // square
        case 3: {                                                       // frame
            const bool outer = std::abs(dx) < s.scale && std::abs(dy) < s.scale;
            const bool inner = std::abs(dx) < s.scale - bar && std::abs(dy) < s.scale - bar;
            return outer && !inner;
        }
        case 4:                                                          // plus
            return (std::abs(dx) < bar || std::abs(dy) < bar) &&
                   std::abs(dx) < 1.4f * s.scale && std::abs(dy) < 1.4f * s.scale;
        case 5:                                                          // diagonal cross
            return (std::abs(dx - dy) < 1.3f * bar || std::abs(dx + dy) < 1.3f * bar) &&
                   r < 1.4f * s.scale;
        case 6: return ((y + s.phase) / s.period) % 2 == 0;              // horizontal stripes
        case 7: return ((x + s.phase) / s.period) % 2 == 0;              // vertical stripes
        case 8:                                                          // checkerboard
            return (((x + s.phase) / s.period) + ((y + s.phase) / s.period)) % 2 == 0;
        case 9: return ((x + y + s.phase) / s.period) % 2 == 0;          // diagonal stripes
        default: return false;
    }
}

}  // namespace

CleanDataset make_synthetic_dataset(const SynthConfig& cfg) {
    if (cfg.n <= 0 || cfg.num_classes < 2 || cfg.num_classes > 10)
        throw parameter_error("synthetic dataset supports 2..10 classes and n > 0");
    if (cfg.height < 8 || cfg.width < 8)
        throw parameter_error("synthetic images must be at least 8x8");

    CleanDataset ds;
    ds.n = cfg.n;
    ds.channels = cfg.channels;
    ds.height = cfg.height;
    ds.width = cfg.width;
    ds.num_classes = cfg.num_classes;
    ds.images.resize(std::size_t(cfg.n) * ds.image_size());
    ds.labels.resize(std::size_t(cfg.n));

    std::mt19937_64 rng(derive_seed(cfg.seed, 0x57a9e));
    auto noise = [&rng, &cfg]() { return cfg.noise_stddev * float(gaussian(rng)); };
    const int h = cfg.height, w = cfg.width, ch = cfg.channels;
    const float smin = 0.16f * std::min(h, w);
    const float smax = 0.30f * std::min(h, w);

    for (index_t i = 0; i < cfg.n; ++i) {
        const int cls = int(i % cfg.num_classes);   // balanced classes
        ds.labels[std::size_t(i)] = cls;
        float* img = ds.images.data() + std::size_t(i) * ds.image_size();

        ShapeCtx s;
        s.h = h;
        s.w = w;
        s.scale = smin + float(uniform01(rng)) * (smax - smin);
        s.cx = s.scale + 1.0f + float(uniform01(rng)) * (w - 2.0f * (s.scale + 1.0f));
        s.cy = s.scale + 1.0f + float(uniform01(rng)) * (h - 2.0f * (s.scale + 1.0f));
        s.period = 3 + int(bounded_rand(rng, 3));
        s.phase = int(bounded_rand(rng, std::uint64_t(2 * s.period)));

        float bg[4], fg[4], gx[4], gy[4];
        for (int c = 0; c < ch; ++c) {
            bg[c] = 0.05f + 0.35f * float(uniform01(rng));
            fg[c] = 0.55f + 0.30f * float(uniform01(rng));
            gx[c] = 0.15f * (float(uniform01(rng)) - 0.5f);
            gy[c] = 0.15f * (float(uniform01(rng)) - 0.5f);
        }

        for (int c = 0; c < ch; ++c) {
            float* plane = img + std::size_t(c) * h * w;
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const bool fgp = in_shape(cls, y, x, s);
                    float v = (fgp ? fg[c] : bg[c]) + gx[c] * (float(x) / w - 0.5f) +
                              gy[c] * (float(y) / h - 0.5f) + noise();
                    // Natural-image headroom: content stays below full white,
                    // the way photographs rarely saturate whole blocks.
                    plane[y * w + x] = std::clamp(v, 0.0f, 0.95f);
                }
            }
        }
    }
    return ds;
}

CleanDataset load_cifar10(const std::filesystem::path& dir, bool train, index_t limit) {
    const std::vector<std::string> files =
        train ? std::vector<std::string>{"data_batch_1.bin", "data_batch_2.bin",
                                         "data_batch_3.bin", "data_batch_4.bin",
                                         "data_batch_5.bin"}
              : std::vector<std::string>{"test_batch.bin"};
    constexpr int kDim = 32;
    constexpr std::size_t kRecord = 1 + 3 * kDim * kDim;

    CleanDataset ds;
    ds.channels = 3;
    ds.height = kDim;
    ds.width = kDim;
    ds.num_classes = 10;

    for (const auto& name : files) {
        std::ifstream in(dir / name, std::ios::binary);
        if (!in) throw format_error("cannot open " + (dir / name).string());
        std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
        if (bytes.size() % kRecord != 0)
            throw format_error((dir / name).string() + ": truncated CIFAR-10 batch");
        const std::size_t records = bytes.size() / kRecord;
        for (std::size_t r = 0; r < records; ++r) {
            if (limit > 0 && ds.n >= limit) return ds;
            const unsigned char* rec = bytes.data() + r * kRecord;
            ds.labels.push_back(std::int32_t(rec[0]));
            for (std::size_t p = 0; p < kRecord - 1; ++p)
                ds.images.push_back(float(rec[1 + p]) / 255.0f);
            ++ds.n;
        }
    }
    if (ds.n == 0) throw format_error("no CIFAR-10 records under " + dir.string());
    return ds;
}

}  // namespace proiso
