#include "proiso/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <Eigen/Core>

namespace proiso {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using ConstMapRM = Eigen::Map<const MatRM>;

std::pair<int, int> ArchDescriptor::block_hw(int l) const {
    int h = in_h, w = in_w;
    for (int i = 0; i <= l; ++i) {
        h /= 2;
        w /= 2;
    }
    return {h, w};
}

int ArchDescriptor::fc_inputs() const {
    auto [h, w] = block_hw(num_blocks() - 1);
    return block_channels.back() * h * w;
}

void ArchDescriptor::validate() const {
    if (in_channels < 1 || in_h < 1 || in_w < 1)
        throw config_error("input dims must be positive");
    if (block_channels.empty()) throw config_error("at least one block required");
    for (int c : block_channels)
        if (c < 1) throw config_error("block channel counts must be positive");
    if (num_classes < 2) throw config_error("need at least two classes");
    int h = in_h, w = in_w;
    for (std::size_t l = 0; l < block_channels.size(); ++l) {
        if (h < 2 || w < 2)
            throw config_error("input too small for " +
                               std::to_string(block_channels.size()) + " pooling blocks");
        h /= 2;
        w /= 2;
    }
}

ConvNet::ConvNet(ArchDescriptor arch, std::uint64_t seed) : arch_(std::move(arch)) {
    arch_.validate();
    std::mt19937_64 rng(derive_seed(seed, 0x11717));
    int in_c = arch_.in_channels;
    for (int out_c : arch_.block_channels) {
        Block b;
        b.weight.resize(out_c, in_c * 9);
        const float scale = std::sqrt(2.0f / float(in_c * 9));  // He init
        for (auto& v : b.weight.v) v = scale * float(gaussian(rng));
        b.bias.assign(std::size_t(out_c), 0.0f);
        blocks.push_back(std::move(b));
        in_c = out_c;
    }
    fc_weight.resize(arch_.fc_inputs(), arch_.num_classes);
    const float scale = std::sqrt(2.0f / float(arch_.fc_inputs()));
    for (auto& v : fc_weight.v) v = scale * float(gaussian(rng));
    fc_bias.assign(std::size_t(arch_.num_classes), 0.0f);
}

index_t ConvNet::parameter_count() const {
    index_t n = index_t(fc_weight.v.size()) + index_t(fc_bias.size());
    for (const auto& b : blocks) n += index_t(b.weight.v.size()) + index_t(b.bias.size());
    return n;
}

std::uint64_t ConvNet::parameter_hash() const {
    std::uint64_t h = kFnvOffset;
    for (const auto& b : blocks) {
        h = fnv1a64(b.weight.v.data(), b.weight.v.size() * sizeof(float), h);
        h = fnv1a64(b.bias.data(), b.bias.size() * sizeof(float), h);
    }
    h = fnv1a64(fc_weight.v.data(), fc_weight.v.size() * sizeof(float), h);
    h = fnv1a64(fc_bias.data(), fc_bias.size() * sizeof(float), h);
    return h;
}

namespace {

constexpr char kCkptMagic[8] = {'P', 'R', 'O', 'I', 'S', 'O', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw format_error("truncated checkpoint");
    return v;
}

void put_floats(std::ofstream& out, const std::vector<float>& v) {
    out.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * sizeof(float)));
}

void get_floats(std::ifstream& in, std::vector<float>& v) {
    in.read(reinterpret_cast<char*>(v.data()), std::streamsize(v.size() * sizeof(float)));
    if (!in) throw format_error("truncated checkpoint");
}

}  // namespace

void ConvNet::save(const std::filesystem::path& file) const {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw format_error("cannot write checkpoint: " + file.string());
    out.write(kCkptMagic, sizeof(kCkptMagic));
    put(out, kCkptVersion);
    put(out, std::int32_t(arch_.in_channels));
    put(out, std::int32_t(arch_.in_h));
    put(out, std::int32_t(arch_.in_w));
    put(out, std::int32_t(arch_.num_classes));
    put(out, std::int32_t(arch_.block_channels.size()));
    for (int c : arch_.block_channels) put(out, std::int32_t(c));
    for (const auto& b : blocks) {
        put_floats(out, b.weight.v);
        put_floats(out, b.bias);
    }
    put_floats(out, fc_weight.v);
    put_floats(out, fc_bias);
    put(out, parameter_hash());
    if (!out) throw format_error("short write: " + file.string());
}

ConvNet ConvNet::load(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw format_error("cannot open checkpoint: " + file.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
        throw format_error("not a checkpoint: " + file.string());
    const auto version = get<std::uint32_t>(in);
    if (version != kCkptVersion)
        throw format_error("checkpoint version " + std::to_string(version) +
                           " unsupported (expected " + std::to_string(kCkptVersion) + ")");
    ArchDescriptor arch;
    arch.in_channels = get<std::int32_t>(in);
    arch.in_h = get<std::int32_t>(in);
    arch.in_w = get<std::int32_t>(in);
    arch.num_classes = get<std::int32_t>(in);
    const auto nblocks = get<std::int32_t>(in);
    if (nblocks < 1 || nblocks > 64) throw format_error("implausible block count");
    arch.block_channels.resize(nblocks);
    for (auto& c : arch.block_channels) c = get<std::int32_t>(in);

    ConvNet net(arch, 0);
    for (auto& b : net.blocks) {
        get_floats(in, b.weight.v);
        get_floats(in, b.bias);
    }
    get_floats(in, net.fc_weight.v);
    get_floats(in, net.fc_bias);
    const auto stored = get<std::uint64_t>(in);
    if (stored != net.parameter_hash())
        throw format_error("checkpoint parameter hash mismatch: " + file.string());
    return net;
}

void Gradients::match(const ConvNet& net) {
    blocks.resize(net.blocks.size());
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        blocks[i].weight.resize(net.blocks[i].weight.rows, net.blocks[i].weight.cols);
        blocks[i].bias.assign(net.blocks[i].bias.size(), 0.0f);
    }
    fc_weight.resize(net.fc_weight.rows, net.fc_weight.cols);
    fc_bias.assign(net.fc_bias.size(), 0.0f);
}

void Gradients::zero() {
    for (auto& b : blocks) {
        std::fill(b.weight.v.begin(), b.weight.v.end(), 0.0f);
        std::fill(b.bias.begin(), b.bias.end(), 0.0f);
    }
    std::fill(fc_weight.v.begin(), fc_weight.v.end(), 0.0f);
    std::fill(fc_bias.begin(), fc_bias.end(), 0.0f);
}

namespace {

// Gathers 3x3 neighborhoods into cols[(c*9 + ky*3 + kx)][b*h*w + y*w + x].
// The source is addressed plane-wise: plane(c, b) = src + c*stride_c + b*stride_b,
// which covers both the sample-major input batch and channel-major block
// activations.
void im2col(const float* src, std::size_t stride_c, std::size_t stride_b, int channels,
            int batch, int h, int w, float* cols) {
    const std::size_t plane = std::size_t(h) * w;
    const std::size_t row_len = std::size_t(batch) * plane;
    for (int c = 0; c < channels; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                float* row = cols + (std::size_t(c) * 9 + ky * 3 + kx) * row_len;
                const int sx = kx - 1;
                const int x0 = std::max(0, -sx);
                const int x1 = std::min(w, w - sx);
                for (int b = 0; b < batch; ++b) {
                    const float* sp = src + c * stride_c + b * stride_b;
                    float* dp = row + b * plane;
                    for (int y = 0; y < h; ++y) {
                        const int iy = y + ky - 1;
                        float* d = dp + std::size_t(y) * w;
                        if (iy < 0 || iy >= h) {
                            std::fill(d, d + w, 0.0f);
                            continue;
                        }
                        const float* s = sp + std::size_t(iy) * w;
                        if (x0 > 0) d[0] = 0.0f;
                        std::memcpy(d + x0, s + x0 + sx, std::size_t(x1 - x0) * sizeof(float));
                        if (x1 < w) d[w - 1] = 0.0f;
                    }
                }
            }
        }
    }
}

// Transpose of im2col: scatter-adds column gradients back onto the
// channel-major input gradient.
void col2im(const float* cols, int channels, int batch, int h, int w, float* dst) {
    const std::size_t plane = std::size_t(h) * w;
    const std::size_t row_len = std::size_t(batch) * plane;
    std::fill(dst, dst + std::size_t(channels) * row_len, 0.0f);
    for (int c = 0; c < channels; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const float* row = cols + (std::size_t(c) * 9 + ky * 3 + kx) * row_len;
                const int sx = kx - 1;
                const int x0 = std::max(0, -sx);
                const int x1 = std::min(w, w - sx);
                for (int b = 0; b < batch; ++b) {
                    float* dp = dst + (std::size_t(c) * batch + b) * plane;
                    const float* sp = row + b * plane;
                    for (int y = 0; y < h; ++y) {
                        const int iy = y + ky - 1;
                        if (iy < 0 || iy >= h) continue;
                        float* d = dp + std::size_t(iy) * w + sx;
                        const float* s = sp + std::size_t(y) * w;
                        for (int x = x0; x < x1; ++x) d[x] += s[x];
                    }
                }
            }
        }
    }
}

void maxpool_forward(const float* act, int out_c, int batch, int h, int w, float* pooled,
                     std::uint8_t* arg) {
    const int h2 = h / 2, w2 = w / 2;
    const std::size_t in_plane = std::size_t(h) * w;
    const std::size_t out_plane = std::size_t(h2) * w2;
    for (int f = 0; f < out_c; ++f) {
        for (int b = 0; b < batch; ++b) {
            const float* sp = act + (std::size_t(f) * batch + b) * in_plane;
            float* dp = pooled + (std::size_t(f) * batch + b) * out_plane;
            std::uint8_t* ap = arg + (std::size_t(f) * batch + b) * out_plane;
            for (int oy = 0; oy < h2; ++oy) {
                const float* r0 = sp + std::size_t(2 * oy) * w;
                const float* r1 = r0 + w;
                for (int ox = 0; ox < w2; ++ox) {
                    const int x = 2 * ox;
                    float best = r0[x];
                    std::uint8_t which = 0;
                    if (r0[x + 1] > best) { best = r0[x + 1]; which = 1; }
                    if (r1[x] > best) { best = r1[x]; which = 2; }
                    if (r1[x + 1] > best) { best = r1[x + 1]; which = 3; }
                    dp[oy * w2 + ox] = best;
                    ap[oy * w2 + ox] = which;
                }
            }
        }
    }
}

void maxpool_backward(const float* dpooled, const std::uint8_t* arg, int out_c, int batch,
                      int h, int w, float* dact) {
    const int h2 = h / 2, w2 = w / 2;
    const std::size_t in_plane = std::size_t(h) * w;
    const std::size_t out_plane = std::size_t(h2) * w2;
    std::fill(dact, dact + std::size_t(out_c) * batch * in_plane, 0.0f);
    for (int f = 0; f < out_c; ++f) {
        for (int b = 0; b < batch; ++b) {
            float* dp = dact + (std::size_t(f) * batch + b) * in_plane;
            const float* sp = dpooled + (std::size_t(f) * batch + b) * out_plane;
            const std::uint8_t* ap = arg + (std::size_t(f) * batch + b) * out_plane;
            for (int oy = 0; oy < h2; ++oy) {
                for (int ox = 0; ox < w2; ++ox) {
                    const std::uint8_t which = ap[oy * w2 + ox];
                    const int y = 2 * oy + (which >> 1);
                    const int x = 2 * ox + (which & 1);
                    dp[y * w + x] += sp[oy * w2 + ox];
                }
            }
        }
    }
}

void ensure_size(std::vector<float>& v, std::size_t n) {
    if (v.size() < n) v.resize(n);
}

}  // namespace

const float* block_output(const ForwardState& state, int l) {
    return state.pooled[std::size_t(l)].data();
}

void forward_batch(const ConvNet& net, const float* images, int batch,
                   ForwardState& state, bool keep_for_backward) {
    const ArchDescriptor& arch = net.arch();
    const int L = arch.num_blocks();
    state.batch = batch;
    state.retained = keep_for_backward;
    state.dims.resize(L);
    state.cols.resize(L);
    state.act.resize(L);
    state.pooled.resize(L);
    state.pool_arg.resize(L);

    int in_c = arch.in_channels, h = arch.in_h, w = arch.in_w;
    const float* src = images;
    std::size_t stride_c = std::size_t(h) * w;               // sample-major input
    std::size_t stride_b = std::size_t(in_c) * h * w;

    for (int l = 0; l < L; ++l) {
        const int out_c = arch.block_channels[std::size_t(l)];
        const int h2 = h / 2, w2 = w / 2;
        state.dims[std::size_t(l)] = {in_c, out_c, h, w, h2, w2};

        const std::size_t positions = std::size_t(batch) * h * w;
        auto& cols = state.cols[std::size_t(l)];
        if (cols.size() < std::size_t(in_c) * 9 * positions)
            cols.resize(std::size_t(in_c) * 9 * positions);
        im2col(src, stride_c, stride_b, in_c, batch, h, w, cols.data());

        auto& act = state.act[std::size_t(l)];
        if (act.size() < std::size_t(out_c) * positions)
            act.resize(std::size_t(out_c) * positions);
        {
            ConstMapRM W(net.blocks[std::size_t(l)].weight.v.data(), out_c, in_c * 9);
            ConstMapRM C(cols.data(), in_c * 9, Eigen::Index(positions));
            MapRM A(act.data(), out_c, Eigen::Index(positions));
            A.noalias() = W * C;
            const auto& bias = net.blocks[std::size_t(l)].bias;
            for (int f = 0; f < out_c; ++f)
                A.row(f) = (A.row(f).array() + bias[std::size_t(f)]).max(0.0f);  // relu
        }

        const std::size_t pooled_len = std::size_t(out_c) * batch * h2 * w2;
        auto& pooled = state.pooled[std::size_t(l)];
        if (pooled.size() < pooled_len) pooled.resize(pooled_len);
        auto& parg = state.pool_arg[std::size_t(l)];
        if (parg.size() < pooled_len) parg.resize(pooled_len);
        maxpool_forward(act.data(), out_c, batch, h, w, pooled.data(), parg.data());

        src = pooled.data();
        stride_c = std::size_t(batch) * h2 * w2;             // channel-major from here on
        stride_b = std::size_t(h2) * w2;
        in_c = out_c;
        h = h2;
        w = w2;
    }

    // Flatten [C][B][hw] -> [B][C*hw] for the classifier head.
    const int fc_dim = arch.fc_inputs();
    const std::size_t hw = std::size_t(h) * w;
    ensure_size(state.fc_in, std::size_t(batch) * fc_dim);
    const float* last = state.pooled[std::size_t(L - 1)].data();
    for (int f = 0; f < in_c; ++f)
        for (int b = 0; b < batch; ++b)
            std::memcpy(state.fc_in.data() + (std::size_t(b) * fc_dim) + std::size_t(f) * hw,
                        last + (std::size_t(f) * batch + b) * hw, hw * sizeof(float));

    ensure_size(state.logits, std::size_t(batch) * arch.num_classes);
    ConstMapRM X(state.fc_in.data(), batch, fc_dim);
    ConstMapRM W(net.fc_weight.v.data(), fc_dim, arch.num_classes);
    MapRM Y(state.logits.data(), batch, arch.num_classes);
    Y.noalias() = X * W;
    for (int b = 0; b < batch; ++b)
        for (int k = 0; k < arch.num_classes; ++k)
            state.logits[std::size_t(b) * arch.num_classes + k] += net.fc_bias[std::size_t(k)];
}

void backward_batch(const ConvNet& net, ForwardState& state,
                    const std::vector<float>& dlogits, Gradients& grads) {
    if (!state.retained) throw shape_error("forward pass was not retained for backward");
    const ArchDescriptor& arch = net.arch();
    const int L = arch.num_blocks();
    const int batch = state.batch;
    const int fc_dim = arch.fc_inputs();
    if (index_t(dlogits.size()) < index_t(batch) * arch.num_classes)
        throw shape_error("dlogits size mismatch");

    // Classifier head.
    ConstMapRM dY(dlogits.data(), batch, arch.num_classes);
    {
        ConstMapRM X(state.fc_in.data(), batch, fc_dim);
        MapRM gW(grads.fc_weight.v.data(), fc_dim, arch.num_classes);
        gW.noalias() += X.transpose() * dY;
        for (int b = 0; b < batch; ++b)
            for (int k = 0; k < arch.num_classes; ++k)
                grads.fc_bias[std::size_t(k)] += dlogits[std::size_t(b) * arch.num_classes + k];
    }
    ensure_size(state.scratch_a, std::size_t(batch) * fc_dim);
    {
        ConstMapRM W(net.fc_weight.v.data(), fc_dim, arch.num_classes);
        MapRM dX(state.scratch_a.data(), batch, fc_dim);
        dX.noalias() = dY * W.transpose();
    }

    // Un-flatten into the channel-major gradient of the last pooled output.
    const auto& last_dims = state.dims[std::size_t(L - 1)];
    const std::size_t hw = std::size_t(last_dims.h2) * last_dims.w2;
    ensure_size(state.scratch_b, std::size_t(last_dims.out_c) * batch * hw);
    for (int f = 0; f < last_dims.out_c; ++f)
        for (int b = 0; b < batch; ++b)
            std::memcpy(state.scratch_b.data() + (std::size_t(f) * batch + b) * hw,
                        state.scratch_a.data() + std::size_t(b) * fc_dim + std::size_t(f) * hw,
                        hw * sizeof(float));

    // scratch_b holds d(pooled) of the current block as we walk backwards.
    for (int l = L - 1; l >= 0; --l) {
        const auto& d = state.dims[std::size_t(l)];
        const std::size_t positions = std::size_t(batch) * d.h * d.w;

        ensure_size(state.scratch_a, std::size_t(d.out_c) * positions);
        maxpool_backward(state.scratch_b.data(), state.pool_arg[std::size_t(l)].data(),
                         d.out_c, batch, d.h, d.w, state.scratch_a.data());

        const auto& act = state.act[std::size_t(l)];
        float* dact = state.scratch_a.data();
        for (std::size_t i = 0; i < std::size_t(d.out_c) * positions; ++i)
            if (act[i] <= 0.0f) dact[i] = 0.0f;  // relu gate

        {
            ConstMapRM dA(dact, d.out_c, Eigen::Index(positions));
            ConstMapRM C(state.cols[std::size_t(l)].data(), d.in_c * 9, Eigen::Index(positions));
            MapRM gW(grads.blocks[std::size_t(l)].weight.v.data(), d.out_c, d.in_c * 9);
            gW.noalias() += dA * C.transpose();
            // Fixed-order reduction: vectorized sums peel by pointer
            // alignment, which would make the bias gradient depend on where
            // the buffer happened to land.
            auto& gb = grads.blocks[std::size_t(l)].bias;
            for (int f = 0; f < d.out_c; ++f) {
                const float* row = dact + std::size_t(f) * positions;
                double acc = 0.0;
                for (std::size_t i = 0; i < positions; ++i) acc += double(row[i]);
                gb[std::size_t(f)] += float(acc);
            }
        }

        if (l == 0) break;
        ensure_size(state.scratch_c, std::size_t(d.in_c) * 9 * positions);
        {
            ConstMapRM W(net.blocks[std::size_t(l)].weight.v.data(), d.out_c, d.in_c * 9);
            ConstMapRM dA(dact, d.out_c, Eigen::Index(positions));
            MapRM dC(state.scratch_c.data(), d.in_c * 9, Eigen::Index(positions));
            dC.noalias() = W.transpose() * dA;
        }
        ensure_size(state.scratch_b, std::size_t(d.in_c) * positions);
        col2im(state.scratch_c.data(), d.in_c, batch, d.h, d.w, state.scratch_b.data());
    }
}

int argmax_row(const float* row, int k) {
    int best = 0;
    for (int i = 1; i < k; ++i)
        if (row[i] > row[best]) best = i;
    return best;
}

void softmax_xent(const float* logits, int batch, int k, const std::int32_t* labels,
                  float* per_sample_ce, float* dlogits, const float* weights) {
    for (int b = 0; b < batch; ++b) {
        const float* row = logits + std::size_t(b) * k;
        float mx = row[0];
        for (int i = 1; i < k; ++i) mx = std::max(mx, row[i]);
        double denom = 0.0;
        for (int i = 0; i < k; ++i) denom += std::exp(double(row[i]) - mx);
        const int y = labels[b];
        const double logp = double(row[y]) - mx - std::log(denom);
        if (per_sample_ce) per_sample_ce[b] = float(-logp);
        if (dlogits) {
            const float wgt = weights ? weights[b] : 1.0f;
            float* drow = dlogits + std::size_t(b) * k;
            for (int i = 0; i < k; ++i) {
                const float p = float(std::exp(double(row[i]) - mx) / denom);
                drow[i] = (p - (i == y ? 1.0f : 0.0f)) * wgt;
            }
        }
    }
}

void sgd_step(ConvNet& net, const Gradients& grads, SgdState& state, const SgdConfig& cfg) {
    std::vector<std::pair<float*, const float*>> tensors;
    std::vector<std::size_t> sizes;
    for (std::size_t i = 0; i < net.blocks.size(); ++i) {
        tensors.push_back({net.blocks[i].weight.v.data(), grads.blocks[i].weight.v.data()});
        sizes.push_back(net.blocks[i].weight.v.size());
        tensors.push_back({net.blocks[i].bias.data(), grads.blocks[i].bias.data()});
        sizes.push_back(net.blocks[i].bias.size());
    }
    tensors.push_back({net.fc_weight.v.data(), grads.fc_weight.v.data()});
    sizes.push_back(net.fc_weight.v.size());
    tensors.push_back({net.fc_bias.data(), grads.fc_bias.data()});
    sizes.push_back(net.fc_bias.size());

    if (state.velocity.size() != tensors.size()) {
        state.velocity.assign(tensors.size(), {});
        for (std::size_t t = 0; t < tensors.size(); ++t)
            state.velocity[t].assign(sizes[t], 0.0f);
    }
    for (std::size_t t = 0; t < tensors.size(); ++t) {
        float* p = tensors[t].first;
        const float* g = tensors[t].second;
        float* v = state.velocity[t].data();
        for (std::size_t i = 0; i < sizes[t]; ++i) {
            v[i] = cfg.momentum * v[i] + g[i] + cfg.weight_decay * p[i];
            p[i] -= cfg.learning_rate * v[i];
        }
    }
}

}  // namespace proiso
