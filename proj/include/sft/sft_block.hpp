#pragma once

// One SFT block = spatiotemporal correlation layer (windowed attention over
// per-pixel tokens carrying all frames), spatial refinement layer (per-frame
// windowed attention at doubled channels), and the temporal modeling layer.
// The three branch outputs are fused by a residual sum.

#include "sft/frequency.hpp"
#include "sft/window_attention.hpp"

namespace sft {

// (T,C,h,w) -> token grid (1, h, w, T*C)
template <typename S>
Var<S> to_st_grid(const Var<S>& z) {
    int64_t T = z->value.dim(0), C = z->value.dim(1), h = z->value.dim(2), w = z->value.dim(3);
    return reshape(permute(z, {2, 3, 0, 1}), {1, h, w, T * C});
}

template <typename S>
Var<S> from_st_grid(const Var<S>& grid, int64_t T, int64_t C) {
    int64_t h = grid->value.dim(1), w = grid->value.dim(2);
    return permute(reshape(grid, {h, w, T, C}), {2, 3, 0, 1});
}

template <typename S>
struct SFTBlock {
    std::shared_ptr<SwinBlock<S>> st_swin;  // D = T*C
    Conv2dLayer<S> s_embed;                 // 1x1, C -> 2C
    std::shared_ptr<SwinBlock<S>> s_swin;   // D = 2C; shared with the motion branch
    Linear<S> s_proj;                       // 2C -> C
    TemporalLayer<S> t_layer;
    int64_t T = 0, C = 0;

    SFTBlock() = default;
    template <typename Rng>
    SFTBlock(int64_t T_, int64_t C_, int64_t h, int64_t w, int64_t heads, int64_t ws,
             int64_t mlp_ratio, int64_t d_feb, int64_t modes, Rng& rng, bool rel_bias = true,
             S slope = S(0.2))
        : st_swin(std::make_shared<SwinBlock<S>>(T_ * C_, heads, ws, mlp_ratio, rng, rel_bias,
                                                 slope)),
          s_embed(C_, 2 * C_, 1, 1, 0, rng),
          s_swin(std::make_shared<SwinBlock<S>>(2 * C_, heads, ws, mlp_ratio, rng, rel_bias,
                                                slope)),
          s_proj(2 * C_, C_, rng, S(0.02)),
          t_layer(T_, C_, h, w, heads, d_feb, modes, rng, slope),
          T(T_), C(C_) {}

    // all frames stacked into one spatial grid; mixes time
    Var<S> st_correlation(const Var<S>& z) const {
        return from_st_grid(st_swin->forward(to_st_grid(z)), T, C);
    }

    // per-frame attention at doubled channels; never mixes time
    Var<S> spatial_refinement(const Var<S>& z) const {
        int64_t h = z->value.dim(2), w = z->value.dim(3);
        auto zs = permute(s_embed.forward(z), {0, 2, 3, 1});  // (T, h, w, 2C)
        auto out = s_swin->forward(zs);
        auto flat = reshape(out, {T * h * w, 2 * C});
        return permute(reshape(s_proj.forward(flat), {T, h, w, C}), {0, 3, 1, 2});
    }

    Var<S> forward(const Var<S>& z) const {
        check(z->value.rank() == 4 && z->value.dim(0) == T && z->value.dim(1) == C,
              "sft_block: input shape mismatch");
        auto f_st = st_correlation(z);
        auto f_s = spatial_refinement(z);
        auto f_t = t_layer.forward(z);
        return add(add(add(z, f_st), f_s), f_t);
    }

    void collect(NamedParams<S>& out, const std::string& prefix) const {
        st_swin->collect(out, prefix + ".st_swin");
        s_embed.collect(out, prefix + ".s_embed");
        s_swin->collect(out, prefix + ".s_swin");
        s_proj.collect(out, prefix + ".s_proj");
        t_layer.collect(out, prefix + ".t_layer");
    }
};

template <typename S>
Var<S> stack_forward(const Var<S>& x, const std::vector<SFTBlock<S>>& blocks) {
    check(!blocks.empty(), "stack_forward: empty block list");
    Var<S> h = x;
    for (const auto& b : blocks) h = b.forward(h);
    return h;
}

}  // namespace sft
