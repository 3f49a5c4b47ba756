#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "crossecg/tensor.hpp"

namespace crossecg {

struct ModelConfig {
    std::vector<int> branch_kernels{3, 5, 7, 11};
    int branch_channels = 64;
    std::vector<int> deep_channels{256, 512};
    int attention_reduction = 8;
    int embedding_dim = 128;
    int n_subjects = 0;
    bool use_multi_scale = true;
    bool use_deep_conv = true;
    bool use_attention = true;

    int fused_channels() const {
        return use_multi_scale ? branch_channels * static_cast<int>(branch_kernels.size())
                               : deep_channels.front();
    }
    void validate() const; // throws ConfigError
};

// Multi-scale conv branches -> two deep conv blocks -> gamma-gated
// self-attention -> global average pool -> linear embedding -> L2 norm,
// plus a linear identity classifier on the embedding. Ablation flags swap
// disabled stages for shape-preserving bridges (single wide K=3 branch for
// multi-scale, 1x1 channel lift for the deep blocks).
class Model {
public:
    Model(ModelConfig cfg, std::uint64_t init_seed);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }

    // x [B,1,L] -> unit-norm embeddings [B,embedding_dim]
    Tensor embed(Tape* tp, const Tensor& x, bool train);
    // embeddings [B,embedding_dim] -> logits [B,n_subjects]
    Tensor classify(Tape* tp, const Tensor& emb);

    // Stage outputs, exposed for shape-contract checks.
    Tensor multi_scale_block(Tape* tp, const Tensor& x, bool train);
    Tensor deep_conv(Tape* tp, const Tensor& x, bool train);
    Tensor self_attention(Tape* tp, const Tensor& x);

private:
    Tensor conv_bn_relu(Tape* tp, const Tensor& x, const std::string& prefix, bool train);

    ModelConfig cfg_;
    ParamStore store_;
};

// Index of the winning class per row; ties go to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);

} // namespace crossecg
