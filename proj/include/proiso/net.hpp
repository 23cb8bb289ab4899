#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "proiso/common.hpp"
#include "proiso/errors.hpp"

namespace proiso {

// Plain convnet: per block conv3x3 (pad 1) -> relu -> maxpool2x2, followed
// by one fully connected layer on the flattened last block. The block
// outputs are the feature-tap points used by the isolation stage.
struct ArchDescriptor {
    int in_channels = 3;
    int in_h = 32;
    int in_w = 32;
    std::vector<int> block_channels = {16, 32, 64, 128};
    int num_classes = 10;

    int num_blocks() const { return int(block_channels.size()); }
    // Spatial size of block l's pooled output.
    std::pair<int, int> block_hw(int l) const;
    int fc_inputs() const;
    void validate() const;
    bool operator==(const ArchDescriptor&) const = default;
};

struct ParamMatrix {
    std::vector<float> v;  // row-major
    int rows = 0;
    int cols = 0;
    void resize(int r, int c) {
        rows = r;
        cols = c;
        v.assign(std::size_t(r) * c, 0.0f);
    }
};

class ConvNet {
public:
    ConvNet() = default;
    ConvNet(ArchDescriptor arch, std::uint64_t seed);

    const ArchDescriptor& arch() const { return arch_; }
    index_t parameter_count() const;
    std::uint64_t parameter_hash() const;

    void save(const std::filesystem::path& file) const;
    static ConvNet load(const std::filesystem::path& file);

    struct Block {
        ParamMatrix weight;        // [out_c, in_c * 9]
        std::vector<float> bias;   // [out_c]
    };
    std::vector<Block> blocks;
    ParamMatrix fc_weight;         // [fc_inputs, num_classes]
    std::vector<float> fc_bias;

private:
    ArchDescriptor arch_;
};

// Gradient accumulator with the same tensor shapes as the net.
struct Gradients {
    std::vector<ConvNet::Block> blocks;
    ParamMatrix fc_weight;
    std::vector<float> fc_bias;

    void match(const ConvNet& net);
    void zero();
};

// Per-batch buffers, reused across steps. Activations are kept only when
// the forward pass is asked to retain state for a backward pass.
struct ForwardState {
    struct LayerDims {
        int in_c, out_c, h, w, h2, w2;
    };
    int batch = 0;
    bool retained = false;
    std::vector<LayerDims> dims;
    std::vector<std::vector<float>> cols;     // per block [in_c*9, B*h*w]
    std::vector<std::vector<float>> act;      // post-relu, pre-pool [out_c, B*h*w]
    std::vector<std::vector<float>> pooled;   // [out_c, B*h2*w2] (channel-major)
    std::vector<std::vector<std::uint8_t>> pool_arg;
    std::vector<float> fc_in;                 // [B, fc_inputs]
    std::vector<float> logits;                // [B, num_classes]
    // backward scratch
    std::vector<float> scratch_a, scratch_b, scratch_c;
};

// images: `batch` contiguous samples in NCHW matching the arch input dims.
void forward_batch(const ConvNet& net, const float* images, int batch,
                   ForwardState& state, bool keep_for_backward);

// dlogits: row-major [batch, num_classes]; the caller folds any per-sample
// weighting into it. Accumulates into `grads`.
void backward_batch(const ConvNet& net, ForwardState& state,
                    const std::vector<float>& dlogits, Gradients& grads);

// Pooled output of block l in channel-major layout [c_l][batch * h_l * w_l].
const float* block_output(const ForwardState& state, int l);

// Lowest index wins ties.
int argmax_row(const float* row, int k);

// Per-sample cross-entropy of `logits` ([batch, k]) against labels; when
// dlogits is non-null it receives (softmax - onehot) scaled by the matching
// per-sample weight (weight == nullptr means 1).
void softmax_xent(const float* logits, int batch, int k, const std::int32_t* labels,
                  float* per_sample_ce, float* dlogits, const float* weights);

struct SgdConfig {
    float learning_rate = 0.05f;
    float momentum = 0.9f;
    float weight_decay = 5e-4f;
};

struct SgdState {
    std::vector<std::vector<float>> velocity;  // one buffer per tensor
};

void sgd_step(ConvNet& net, const Gradients& grads, SgdState& state, const SgdConfig& cfg);

}  // namespace proiso
