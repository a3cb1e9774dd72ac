#pragma once

// Parameterized layers on top of the autodiff graph. Parameters are leaf
// Vars held by the layer objects; collect() gathers (name, param) pairs for
// the optimizer and checkpointing. Shared layers may appear twice in a
// collection; callers dedupe by node identity.

#include <random>

#include "sft/autodiff.hpp"

namespace sft {

template <typename S>
using NamedParams = std::vector<std::pair<std::string, Var<S>>>;

template <typename S>
struct Linear {
    Var<S> W, b;

    Linear() = default;
    template <typename Rng>
    Linear(int64_t in, int64_t out, Rng& rng, S w_std = S(-1), bool bias = true) {
        if (w_std < S(0)) w_std = static_cast<S>(std::sqrt(2.0 / static_cast<double>(in)));
        W = leaf(Tensor<S>::randn({in, out}, rng, w_std), "W");
        if (bias) b = leaf(Tensor<S>::zeros({out}), "b");
    }

    Var<S> forward(const Var<S>& x) const { return linear(x, W, b); }

    void collect(NamedParams<S>& out, const std::string& prefix) const {
        out.push_back({prefix + ".W", W});
        if (b) out.push_back({prefix + ".b", b});
    }
};

template <typename S>
struct Conv2dLayer {
    Var<S> W, b;
    int64_t stride = 1, pad = 0;

    Conv2dLayer() = default;
    template <typename Rng>
    Conv2dLayer(int64_t cin, int64_t cout, int64_t k, int64_t stride_, int64_t pad_, Rng& rng,
                bool bias = true)
        : stride(stride_), pad(pad_) {
        S std = static_cast<S>(std::sqrt(2.0 / static_cast<double>(cin * k * k)));
        W = leaf(Tensor<S>::randn({cout, cin, k, k}, rng, std), "W");
        if (bias) b = leaf(Tensor<S>::zeros({cout}), "b");
    }

    Var<S> forward(const Var<S>& x) const { return conv2d(x, W, b, stride, pad); }

    void collect(NamedParams<S>& out, const std::string& prefix) const {
        out.push_back({prefix + ".W", W});
        if (b) out.push_back({prefix + ".b", b});
    }
};

template <typename S>
struct ConvTranspose2dLayer {
    Var<S> W, b;
    int64_t stride = 1, pad = 0;

    ConvTranspose2dLayer() = default;
    template <typename Rng>
    ConvTranspose2dLayer(int64_t cin, int64_t cout, int64_t k, int64_t stride_, int64_t pad_,
                         Rng& rng, bool bias = true)
        : stride(stride_), pad(pad_) {
        S std = static_cast<S>(std::sqrt(2.0 / static_cast<double>(cin * k * k)));
        W = leaf(Tensor<S>::randn({cin, cout, k, k}, rng, std), "W");
        if (bias) b = leaf(Tensor<S>::zeros({cout}), "b");
    }

    Var<S> forward(const Var<S>& x) const { return conv_transpose2d(x, W, b, stride, pad); }

    void collect(NamedParams<S>& out, const std::string& prefix) const {
        out.push_back({prefix + ".W", W});
        if (b) out.push_back({prefix + ".b", b});
    }
};

template <typename S>
struct GroupNormLayer {
    Var<S> gamma, beta;
    int64_t groups = 1;

    GroupNormLayer() = default;
    GroupNormLayer(int64_t channels, int64_t groups_) : groups(groups_) {
        gamma = leaf(Tensor<S>::ones({channels}), "gamma");
        beta = leaf(Tensor<S>::zeros({channels}), "beta");
    }

    Var<S> forward(const Var<S>& x) const { return group_norm(x, groups, gamma, beta); }

    void collect(NamedParams<S>& out, const std::string& prefix) const {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

template <typename S>
struct LayerNormLayer {
    Var<S> gamma, beta;

    LayerNormLayer() = default;
    explicit LayerNormLayer(int64_t dim) {
        gamma = leaf(Tensor<S>::ones({dim}), "gamma");
        beta = leaf(Tensor<S>::zeros({dim}), "beta");
    }

    Var<S> forward(const Var<S>& x) const { return layer_norm(x, gamma, beta); }

    void collect(NamedParams<S>& out, const std::string& prefix) const {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

// two-layer MLP on row vectors; activation is leaky-rectifier
template <typename S>
struct MlpLayer {
    Linear<S> fc1, fc2;
    S slope = S(0.2);

    MlpLayer() = default;
    template <typename Rng>
    MlpLayer(int64_t dim, int64_t hidden, Rng& rng, S slope_ = S(0.2), S w_std = S(0.02))
        : fc1(dim, hidden, rng, w_std), fc2(hidden, dim, rng, w_std), slope(slope_) {}

    Var<S> forward(const Var<S>& x) const {
        // accepts any rank; rows are the last dimension
        auto shape = x->value.shape;
        int64_t D = shape.back();
        auto h = reshape(x, {x->value.numel() / D, D});
        h = fc2.forward(leaky_relu(fc1.forward(h), slope));
        return reshape(h, shape);
    }

    void collect(NamedParams<S>& out, const std::string& prefix) const {
        fc1.collect(out, prefix + ".fc1");
        fc2.collect(out, prefix + ".fc2");
    }
};

// plain (non-windowed) multi-head self-attention over N tokens of dim D
template <typename S>
struct MultiHeadAttention {
    Linear<S> qkv, proj;
    int64_t dim = 0, heads = 1;

    MultiHeadAttention() = default;
    template <typename Rng>
    MultiHeadAttention(int64_t dim_, int64_t heads_, Rng& rng, S w_std = S(0.02))
        : qkv(dim_, 3 * dim_, rng, w_std), proj(dim_, dim_, rng, w_std), dim(dim_), heads(heads_) {
        check(dim_ % heads_ == 0, "attention: dim not divisible by heads");
    }

    // x: (N, D) -> (N, D)
    Var<S> forward(const Var<S>& x) const {
        int64_t N = x->value.dim(0);
        int64_t dh = dim / heads;
        auto qkv_out = qkv.forward(x);                       // (N, 3D)
        auto split = reshape(qkv_out, {N, 3, heads, dh});
        split = permute(split, {1, 2, 0, 3});                // (3, heads, N, dh)
        auto q = reshape(take_axis0(split, {0}), {heads, N, dh});
        auto k = reshape(take_axis0(split, {1}), {heads, N, dh});
        auto v = reshape(take_axis0(split, {2}), {heads, N, dh});
        q = scale(q, static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh))));
        auto attn = softmax_lastdim(bmm(q, transpose_last2(k)));  // (heads, N, N)
        auto ctx = bmm(attn, v);                                  // (heads, N, dh)
        ctx = reshape(permute(ctx, {1, 0, 2}), {N, dim});
        return proj.forward(ctx);
    }

    void collect(NamedParams<S>& out, const std::string& prefix) const {
        qkv.collect(out, prefix + ".qkv");
        proj.collect(out, prefix + ".proj");
    }
};

// squeeze-and-excitation channel gate over (B, C, H, W)
template <typename S>
struct SEBlock {
    Linear<S> fc1, fc2;
    S slope = S(0.2);
    bool enabled = true;

    SEBlock() = default;
    template <typename Rng>
    SEBlock(int64_t channels, int64_t reduction, Rng& rng, S slope_ = S(0.2))
        : fc1(channels, std::max<int64_t>(1, channels / reduction), rng),
          fc2(std::max<int64_t>(1, channels / reduction), channels, rng),
          slope(slope_) {}

    Var<S> forward(const Var<S>& x) const {
        if (!enabled) return x;
        auto g = sigmoid(fc2.forward(leaky_relu(fc1.forward(mean_hw(x)), slope)));
        return mul_channels(x, g);
    }

    void collect(NamedParams<S>& out, const std::string& prefix) const {
        fc1.collect(out, prefix + ".fc1");
        fc2.collect(out, prefix + ".fc2");
    }
};

// dedupe by node identity (shared layers appear once)
template <typename S>
NamedParams<S> unique_params(const NamedParams<S>& in) {
    NamedParams<S> out;
    std::unordered_set<Node<S>*> seen;
    for (const auto& [name, p] : in)
        if (seen.insert(p.get()).second) out.push_back({name, p});
    return out;
}

}  // namespace sft
