#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "proiso/features.hpp"
#include "proiso/train.hpp"
#include "test_util.hpp"

using namespace proiso;
using proiso::testutil::separable_two_class;
using proiso::testutil::tiny_clean;

namespace {

ArchDescriptor tiny_arch() {
    ArchDescriptor a;
    a.in_channels = 2;
    a.in_h = 6;
    a.in_w = 6;
    a.block_channels = {3, 4};
    a.num_classes = 3;
    return a;
}

// Flattened view of every parameter tensor, for the finite-difference probe.
std::vector<float*> param_ptrs(ConvNet& net) {
    std::vector<float*> ptrs;
    for (auto& b : net.blocks) {
        for (auto& v : b.weight.v) ptrs.push_back(&v);
        for (auto& v : b.bias) ptrs.push_back(&v);
    }
    for (auto& v : net.fc_weight.v) ptrs.push_back(&v);
    for (auto& v : net.fc_bias) ptrs.push_back(&v);
    return ptrs;
}

std::vector<float> grad_values(const ConvNet& net, Gradients& g) {
    std::vector<float> out;
    for (std::size_t i = 0; i < net.blocks.size(); ++i) {
        out.insert(out.end(), g.blocks[i].weight.v.begin(), g.blocks[i].weight.v.end());
        out.insert(out.end(), g.blocks[i].bias.begin(), g.blocks[i].bias.end());
    }
    out.insert(out.end(), g.fc_weight.v.begin(), g.fc_weight.v.end());
    out.insert(out.end(), g.fc_bias.begin(), g.fc_bias.end());
    return out;
}

double batch_mean_ce(const ConvNet& net, const std::vector<float>& images, int batch,
                     const std::vector<std::int32_t>& labels) {
    ForwardState state;
    forward_batch(net, images.data(), batch, state, false);
    std::vector<float> ce(static_cast<std::size_t>(batch));
    softmax_xent(state.logits.data(), batch, net.arch().num_classes, labels.data(),
                 ce.data(), nullptr, nullptr);
    double acc = 0.0;
    for (float v : ce) acc += double(v);
    return acc / batch;
}

}  // namespace

// Backprop against central finite differences on the mean cross-entropy.
TEST_CASE("analytic gradients match finite differences") {
    ConvNet net(tiny_arch(), 42);
    const int batch = 3;
    std::mt19937_64 rng(7);
    std::vector<float> images(std::size_t(batch) * 2 * 6 * 6);
    for (auto& v : images) v = float(uniform01(rng));
    const std::vector<std::int32_t> labels = {0, 2, 1};

    ForwardState state;
    forward_batch(net, images.data(), batch, state, true);
    std::vector<float> ce(batch), weights(batch, 1.0f / batch);
    std::vector<float> dlogits(std::size_t(batch) * 3);
    softmax_xent(state.logits.data(), batch, 3, labels.data(), ce.data(), dlogits.data(),
                 weights.data());
    Gradients grads;
    grads.match(net);
    grads.zero();
    backward_batch(net, state, dlogits, grads);
    const std::vector<float> analytic = grad_values(net, grads);

    auto ptrs = param_ptrs(net);
    REQUIRE(ptrs.size() == analytic.size());

    // Probe a deterministic spread of parameters (every tensor gets hit).
    std::size_t checked = 0;
    double worst = 0.0;
    for (std::size_t i = 0; i < ptrs.size(); i += 3) {
        const float keep = *ptrs[i];
        const float h = 2e-3f;
        *ptrs[i] = keep + h;
        const double up = batch_mean_ce(net, images, batch, labels);
        *ptrs[i] = keep - h;
        const double dn = batch_mean_ce(net, images, batch, labels);
        *ptrs[i] = keep;
        const double fd = (up - dn) / (2.0 * h);
        const double diff = std::abs(fd - double(analytic[i]));
        const double scale = std::max({1e-2, std::abs(fd), std::abs(double(analytic[i]))});
        worst = std::max(worst, diff / scale);
        ++checked;
    }
    CHECK(checked > 50);
    CHECK(worst < 2e-2);
}

TEST_CASE("directional derivative matches the gradient") {
    ConvNet net(tiny_arch(), 17);
    const int batch = 4;
    std::mt19937_64 rng(23);
    std::vector<float> images(std::size_t(batch) * 2 * 6 * 6);
    for (auto& v : images) v = float(uniform01(rng));
    const std::vector<std::int32_t> labels = {1, 0, 2, 2};

    ForwardState state;
    forward_batch(net, images.data(), batch, state, true);
    std::vector<float> ce(batch), weights(batch, 1.0f / batch);
    std::vector<float> dlogits(std::size_t(batch) * 3);
    softmax_xent(state.logits.data(), batch, 3, labels.data(), ce.data(), dlogits.data(),
                 weights.data());
    Gradients grads;
    grads.match(net);
    grads.zero();
    backward_batch(net, state, dlogits, grads);
    const std::vector<float> g = grad_values(net, grads);

    auto ptrs = param_ptrs(net);
    std::vector<float> direction(ptrs.size());
    double gd = 0.0;
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
        direction[i] = float(uniform01(rng) - 0.5);
        gd += double(g[i]) * direction[i];
    }
    const float h = 1e-3f;
    for (std::size_t i = 0; i < ptrs.size(); ++i) *ptrs[i] += h * direction[i];
    const double up = batch_mean_ce(net, images, batch, labels);
    for (std::size_t i = 0; i < ptrs.size(); ++i) *ptrs[i] -= 2.0f * h * direction[i];
    const double dn = batch_mean_ce(net, images, batch, labels);
    const double fd = (up - dn) / (2.0 * h);
    CHECK(std::abs(fd - gd) < 5e-3 * std::max(1.0, std::abs(gd)));
}

TEST_CASE("zero input through a bias-free net gives all-zero features") {
    ConvNet net(tiny_arch(), 5);  // biases start at zero
    CleanDataset clean;
    clean.n = 2;
    clean.channels = 2;
    clean.height = 6;
    clean.width = 6;
    clean.num_classes = 3;
    clean.images.assign(std::size_t(2) * 2 * 6 * 6, 0.0f);
    clean.labels = {0, 1};
    const auto data = wrap_clean(clean, Split::train);
    for (Pooling p : {Pooling::spatial_max, Pooling::spatial_mean}) {
        const FeatureBank bank = extract_features(net, data, p);
        for (float v : bank.values) CHECK(v == 0.0f);
    }
}

TEST_CASE("duplicate samples produce identical feature rows") {
    auto clean = tiny_clean(4, 2, 2, 6, 6, 31);
    std::copy(clean.image(0), clean.image(0) + clean.image_size(),
              clean.images.data() + 2 * clean.image_size());  // row 2 := row 0
    const auto data = wrap_clean(clean, Split::train);
    ConvNet net(tiny_arch(), 3);
    const FeatureBank bank = extract_features(net, data, Pooling::spatial_max);
    const int total = bank.total_channels();
    for (int c = 0; c < total; ++c) CHECK(bank.at(0, c) == bank.at(2, c));
}

TEST_CASE("max and mean pooling agree on a 1x1 spatial map") {
    ArchDescriptor a;
    a.in_channels = 1;
    a.in_h = 4;
    a.in_w = 4;
    a.block_channels = {2, 3};  // 4 -> 2 -> 1
    a.num_classes = 2;
    ConvNet net(a, 9);
    auto clean = tiny_clean(3, 2, 1, 4, 4, 13);
    const auto data = wrap_clean(clean, Split::train);
    const FeatureBank mx = extract_features(net, data, Pooling::spatial_max);
    const FeatureBank mean = extract_features(net, data, Pooling::spatial_mean);
    const int off = mx.layer_offsets[1];  // second block has the 1x1 maps
    for (index_t i = 0; i < 3; ++i)
        for (int c = 0; c < 3; ++c) CHECK(mx.at(i, off + c) == mean.at(i, off + c));
}

TEST_CASE("extract_features leaves the parameters untouched") {
    ConvNet net(tiny_arch(), 21);
    const auto before = net.parameter_hash();
    const auto data = wrap_clean(tiny_clean(6, 3, 2, 6, 6, 37), Split::train);
    (void)extract_features(net, data, Pooling::spatial_max);
    CHECK(net.parameter_hash() == before);
}

TEST_CASE("feature values are non-negative after relu taps") {
    ConvNet net(tiny_arch(), 2);
    const auto data = wrap_clean(tiny_clean(8, 3, 2, 6, 6, 41), Split::train);
    const FeatureBank bank = extract_features(net, data, Pooling::spatial_max);
    for (float v : bank.values) CHECK(v >= 0.0f);
}

TEST_CASE("evaluate counts argmax hits with the lowest-index tie rule") {
    // All-zero parameters give all-equal logits, so everything predicts 0.
    ConvNet net(tiny_arch(), 1);
    for (auto& b : net.blocks) std::fill(b.weight.v.begin(), b.weight.v.end(), 0.0f);
    std::fill(net.fc_weight.v.begin(), net.fc_weight.v.end(), 0.0f);
    auto clean = tiny_clean(30, 3, 2, 6, 6, 43);
    const auto data = wrap_clean(clean, Split::clean_test);
    index_t zeros = 0;
    for (auto l : clean.labels) zeros += l == 0 ? 1 : 0;
    CHECK(evaluate(net, data) == doctest::Approx(double(zeros) / 30.0));
    const auto preds = predict(net, data);
    for (auto p : preds) CHECK(p == 0);
}

TEST_CASE("evaluate is invariant under dataset permutation") {
    ConvNet net(tiny_arch(), 11);
    auto clean = tiny_clean(40, 3, 2, 6, 6, 47);
    const auto data = wrap_clean(clean, Split::clean_test);
    std::vector<index_t> perm(40);
    std::iota(perm.begin(), perm.end(), index_t{0});
    std::mt19937_64 rng(3);
    fisher_yates_shuffle(perm, rng);
    CHECK(evaluate(net, data) == doctest::Approx(evaluate(net, subset(data, perm))));
}

TEST_CASE("empty dataset is a domain error") {
    ConvNet net(tiny_arch(), 1);
    PoisonedDataset empty;
    empty.channels = 2;
    empty.height = 6;
    empty.width = 6;
    empty.num_classes = 3;
    CHECK_THROWS_AS(evaluate(net, empty), std::domain_error);
}

TEST_CASE("epochs = 0 is rejected") {
    const auto data = wrap_clean(tiny_clean(16, 2, 2, 6, 6, 51), Split::train);
    ConvNet net(tiny_arch(), 1);
    TrainConfig cfg;
    cfg.epochs = 0;
    CHECK_THROWS_AS(train_standard(net, data, cfg), parameter_error);
}

// Logistic-regression oracle: plain gradient descent on the flattened
// pixels reaches 100% on this set, certifying linear separability; the
// convnet then has to hit at least 99%.
TEST_CASE("separable toy set trains to >= 99% accuracy") {
    const CleanDataset clean = separable_two_class(200, 16, 16, 77);
    const auto data = wrap_clean(clean, Split::train);

    {
        const std::size_t dim = std::size_t(clean.image_size());
        std::vector<double> wvec(dim, 0.0);
        double bias = 0.0;
        for (int it = 0; it < 500; ++it) {
            std::vector<double> gw(dim, 0.0);
            double gb = 0.0;
            for (index_t i = 0; i < clean.n; ++i) {
                const float* x = clean.image(i);
                double z = bias;
                for (std::size_t d = 0; d < dim; ++d) z += wvec[d] * double(x[d]);
                const double p = 1.0 / (1.0 + std::exp(-z));
                const double err = p - double(clean.labels[std::size_t(i)]);
                for (std::size_t d = 0; d < dim; ++d) gw[d] += err * double(x[d]);
                gb += err;
            }
            for (std::size_t d = 0; d < dim; ++d) wvec[d] -= 0.05 * gw[d] / double(clean.n);
            bias -= 0.05 * gb / double(clean.n);
        }
        index_t hits = 0;
        for (index_t i = 0; i < clean.n; ++i) {
            const float* x = clean.image(i);
            double z = bias;
            for (std::size_t d = 0; d < dim; ++d) z += wvec[d] * double(x[d]);
            hits += ((z > 0.0) == (clean.labels[std::size_t(i)] == 1)) ? 1 : 0;
        }
        REQUIRE(hits == clean.n);  // oracle: the set is linearly separable
    }

    ArchDescriptor a;
    a.in_channels = 1;
    a.in_h = 16;
    a.in_w = 16;
    a.block_channels = {8, 16};
    a.num_classes = 2;
    ConvNet net(a, 5);
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.batch_size = 32;
    cfg.learning_rate = 0.02;
    cfg.augment_flip = false;
    cfg.rng_seed = 5;
    const ConvNet trained = train_standard(net, data, cfg);
    CHECK(evaluate(trained, data) >= 0.99);
}

TEST_CASE("training is deterministic for a fixed seed") {
    const auto data = wrap_clean(tiny_clean(64, 3, 2, 6, 6, 53), Split::train);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.rng_seed = 9;
    ConvNet a = train_standard(ConvNet(tiny_arch(), 4), data, cfg);
    ConvNet b = train_standard(ConvNet(tiny_arch(), 4), data, cfg);
    CHECK(a.parameter_hash() == b.parameter_hash());
}

TEST_CASE("checkpoint round-trip preserves parameters and rejects tampering") {
    namespace fs = std::filesystem;
    const auto file = fs::temp_directory_path() / "proiso_net_test.ckpt";
    ConvNet net(tiny_arch(), 33);
    net.save(file);
    const ConvNet back = ConvNet::load(file);
    CHECK(back.parameter_hash() == net.parameter_hash());
    CHECK(back.arch() == net.arch());

    // Flip one payload byte: the stored hash no longer matches.
    {
        std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(64);
        char byte;
        f.seekg(64);
        f.read(&byte, 1);
        byte = char(byte ^ 0x40);
        f.seekp(64);
        f.write(&byte, 1);
    }
    CHECK_THROWS_AS(ConvNet::load(file), format_error);
    fs::remove(file);
}

TEST_CASE("feature bank cache round-trips") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "proiso_bank_test";
    ConvNet net(tiny_arch(), 8);
    const auto data = wrap_clean(tiny_clean(10, 3, 2, 6, 6, 59), Split::train);
    const FeatureBank bank = extract_features(net, data, Pooling::spatial_mean);
    save_feature_bank(bank, dir);
    const FeatureBank back = load_feature_bank(dir);
    CHECK(back.values == bank.values);
    CHECK(back.layer_offsets == bank.layer_offsets);
    CHECK(back.pooling == bank.pooling);
    fs::remove_all(dir);
}
