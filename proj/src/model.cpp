#include "crossecg/model.hpp"

#include <cmath>

namespace crossecg {

void ModelConfig::validate() const {
    std::vector<std::string> problems;
    if (branch_kernels.empty()) problems.push_back("branch_kernels must be non-empty");
    for (int k : branch_kernels)
        if (k < 1 || k % 2 == 0) problems.push_back("branch kernel sizes must be odd and positive");
    if (branch_channels < 1) problems.push_back("branch_channels must be positive");
    if (deep_channels.size() != 2) problems.push_back("deep_channels must list two block widths");
    for (int c : deep_channels)
        if (c < 1) problems.push_back("deep_channels must be positive");
    if (use_multi_scale && deep_channels.size() == 2 &&
        deep_channels[0] != branch_channels * static_cast<int>(branch_kernels.size()))
        problems.push_back("deep_channels[0] must equal branch_channels * |branch_kernels|");
    if (attention_reduction < 1) problems.push_back("attention_reduction must be positive");
    if (deep_channels.size() == 2 && deep_channels[1] % attention_reduction != 0)
        problems.push_back("attention_reduction must divide the deep output width");
    if (embedding_dim < 1) problems.push_back("embedding_dim must be positive");
    if (n_subjects < 1) problems.push_back("n_subjects must be positive");
    if (!problems.empty()) {
        std::string msg;
        for (const auto& p : problems) msg += (msg.empty() ? "" : "; ") + p;
        fail("ConfigError", msg);
    }
}

namespace {

Tensor fan_in_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return Tensor::randu(std::move(shape), rng, -bound, bound);
}

} // namespace

Model::Model(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(init_seed);
    const int d0 = cfg_.deep_channels[0];
    const int d1 = cfg_.deep_channels[1];

    auto add_conv = [&](const std::string& prefix, int cout, int cin, int k, bool bn) {
        store_.add_param(prefix + ".w", fan_in_uniform({cout, cin, k}, cin * k, rng));
        store_.add_param(prefix + ".b", Tensor::zeros({cout}));
        if (bn) {
            store_.add_param(prefix + ".bn.gamma", Tensor::full({cout}, 1.0));
            store_.add_param(prefix + ".bn.beta", Tensor::zeros({cout}));
            store_.add_buffer(prefix + ".bn.mean", Tensor::zeros({cout}));
            store_.add_buffer(prefix + ".bn.var", Tensor::full({cout}, 1.0));
        }
    };

    if (cfg_.use_multi_scale) {
        for (size_t i = 0; i < cfg_.branch_kernels.size(); ++i)
            add_conv("ms.branch" + std::to_string(i), cfg_.branch_channels, 1,
                     cfg_.branch_kernels[static_cast<size_t>(i)], true);
    } else {
        add_conv("ms.wide", d0, 1, 3, true);
    }

    if (cfg_.use_deep_conv) {
        add_conv("deep.block1", d0, d0, 3, true);
        add_conv("deep.block2", d1, d0, 3, true);
    } else {
        add_conv("deep.lift", d1, d0, 1, false);
    }

    if (cfg_.use_attention) {
        const int cq = d1 / cfg_.attention_reduction;
        add_conv("attn.q", cq, d1, 1, false);
        add_conv("attn.k", cq, d1, 1, false);
        add_conv("attn.v", d1, d1, 1, false);
        store_.add_param("attn.gamma", Tensor::zeros({1}));
    }

    store_.add_param("embed.w", fan_in_uniform({d1, cfg_.embedding_dim}, d1, rng));
    store_.add_param("embed.b", Tensor::zeros({cfg_.embedding_dim}));
    store_.add_param("cls.w",
                     fan_in_uniform({cfg_.embedding_dim, cfg_.n_subjects}, cfg_.embedding_dim, rng));
    store_.add_param("cls.b", Tensor::zeros({cfg_.n_subjects}));
}

Tensor Model::conv_bn_relu(Tape* tp, const Tensor& x, const std::string& prefix, bool train) {
    Tensor h = conv1d(tp, x, store_.param(prefix + ".w"), store_.param(prefix + ".b"));
    h = batchnorm1d(tp, h, store_.param(prefix + ".bn.gamma"), store_.param(prefix + ".bn.beta"),
                    store_.buffer(prefix + ".bn.mean"), store_.buffer(prefix + ".bn.var"), train);
    return relu(tp, h);
}

Tensor Model::multi_scale_block(Tape* tp, const Tensor& x, bool train) {
    if (x.ndim() != 3 || x.dim(1) != 1)
        fail("ShapeMismatch", "multi-scale input must be [B,1,L], got " + shape_str(x.shape));
    if (!cfg_.use_multi_scale) return conv_bn_relu(tp, x, "ms.wide", train);
    std::vector<Tensor> branches;
    for (size_t i = 0; i < cfg_.branch_kernels.size(); ++i)
        branches.push_back(conv_bn_relu(tp, x, "ms.branch" + std::to_string(i), train));
    return concat_channels(tp, branches);
}

Tensor Model::deep_conv(Tape* tp, const Tensor& x, bool train) {
    if (x.dim(1) != cfg_.deep_channels[0])
        fail("ShapeMismatch", "deep_conv expects " + std::to_string(cfg_.deep_channels[0]) +
                                  " channels, got " + shape_str(x.shape));
    if (!cfg_.use_deep_conv)
        return conv1d(tp, x, store_.param("deep.lift.w"), store_.param("deep.lift.b"));
    Tensor h = conv_bn_relu(tp, x, "deep.block1", train);
    return conv_bn_relu(tp, h, "deep.block2", train);
}

Tensor Model::self_attention(Tape* tp, const Tensor& x) {
    const int c = x.dim(1);
    if (c % cfg_.attention_reduction != 0)
        fail("ShapeMismatch", "attention input channels not divisible by the reduction");
    const int cq = c / cfg_.attention_reduction;

    Tensor q = conv1d(tp, x, store_.param("attn.q.w"), store_.param("attn.q.b")); // [B,cq,L]
    Tensor k = conv1d(tp, x, store_.param("attn.k.w"), store_.param("attn.k.b"));
    Tensor v = conv1d(tp, x, store_.param("attn.v.w"), store_.param("attn.v.b")); // [B,c,L]

    Tensor scores = matmul_batched(tp, q, k, /*ta=*/true, /*tb=*/false); // [B,L,L]
    scores = scale_const(tp, scores, 1.0 / std::sqrt(static_cast<double>(cq)));
    Tensor attn = softmax_lastdim(tp, scores); // rows over key positions
    Tensor mixed = matmul_batched(tp, v, attn, /*ta=*/false, /*tb=*/true); // [B,c,L]
    return add(tp, scale_by(tp, mixed, store_.param("attn.gamma")), x);
}

Tensor Model::embed(Tape* tp, const Tensor& x, bool train) {
    Tensor h = multi_scale_block(tp, x, train);
    h = deep_conv(tp, h, train);
    if (cfg_.use_attention) h = self_attention(tp, h);
    Tensor pooled = global_avg_pool(tp, h);
    Tensor e = linear(tp, pooled, store_.param("embed.w"), store_.param("embed.b"));
    return l2_normalize(tp, e, 1e-12);
}

Tensor Model::classify(Tape* tp, const Tensor& emb) {
    return linear(tp, emb, store_.param("cls.w"), store_.param("cls.b"));
}

std::vector<int> argmax_rows(const Tensor& logits) {
    const int B = logits.dim(0), C = logits.dim(1);
    std::vector<int> out(static_cast<size_t>(B));
    for (int b = 0; b < B; ++b) {
        const double* row = logits.ptr() + static_cast<size_t>(b) * C;
        int best = 0;
        for (int c = 1; c < C; ++c)
            if (row[c] > row[best]) best = c;
        out[static_cast<size_t>(b)] = best;
    }
    return out;
}

} // namespace crossecg
