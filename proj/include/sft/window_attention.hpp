#pragma once

// Swin-style building blocks: window partition/reverse, windowed multi-head
// self-attention with relative-position bias, the shifted-window mask, and
// the two-sublayer transformer block shared by the spatiotemporal
// correlation and spatial refinement layers.

#include "sft/nn.hpp"

namespace sft {

// (B, h, w, D) -> (B * h/ws * w/ws, ws*ws, D)
template <typename S>
Var<S> window_partition(const Var<S>& grid, int64_t ws) {
    check(grid->value.rank() == 4, "window_partition: expects (B,h,w,D)");
    int64_t B = grid->value.dim(0), h = grid->value.dim(1), w = grid->value.dim(2),
            D = grid->value.dim(3);
    if (h % ws != 0 || w % ws != 0)
        throw config_error("window_partition: grid " + std::to_string(h) + "x" +
                           std::to_string(w) + " not divisible by window_size " +
                           std::to_string(ws));
    auto x = reshape(grid, {B, h / ws, ws, w / ws, ws, D});
    x = permute(x, {0, 1, 3, 2, 4, 5});
    return reshape(x, {B * (h / ws) * (w / ws), ws * ws, D});
}

template <typename S>
Var<S> window_reverse(const Var<S>& windows, int64_t ws, int64_t B, int64_t h, int64_t w) {
    int64_t D = windows->value.dim(2);
    auto x = reshape(windows, {B, h / ws, w / ws, ws, ws, D});
    x = permute(x, {0, 1, 3, 2, 4, 5});
    return reshape(x, {B, h, w, D});
}

// relative-position index for a ws x ws window: (ws^2 * ws^2) entries into a
// (2ws-1)^2 table
inline std::vector<int64_t> relative_position_index(int64_t ws) {
    std::vector<int64_t> idx(static_cast<size_t>(ws * ws * ws * ws));
    for (int64_t a = 0; a < ws * ws; ++a)
        for (int64_t b = 0; b < ws * ws; ++b) {
            int64_t dy = a / ws - b / ws + (ws - 1);
            int64_t dx = a % ws - b % ws + (ws - 1);
            idx[a * ws * ws + b] = dy * (2 * ws - 1) + dx;
        }
    return idx;
}

// region-id map for the shifted-window mask (standard 3x3 slicing)
inline std::vector<int> shift_region_ids(int64_t h, int64_t w, int64_t ws, int64_t shift) {
    std::vector<int> ids(static_cast<size_t>(h * w));
    int next = 0;
    auto bands = [&](int64_t n) {
        // [0, n-ws), [n-ws, n-shift), [n-shift, n)
        std::vector<std::pair<int64_t, int64_t>> b;
        b.push_back({0, n - ws});
        b.push_back({n - ws, n - shift});
        b.push_back({n - shift, n});
        return b;
    };
    for (auto [y0, y1] : bands(h))
        for (auto [x0, x1] : bands(w)) {
            for (int64_t y = y0; y < y1; ++y)
                for (int64_t x = x0; x < x1; ++x) ids[y * w + x] = next;
            ++next;
        }
    return ids;
}

// additive attention mask per window after a cyclic shift: 0 where the token
// pair shares a region of the shifted layout, large negative otherwise.
// the band boundaries in shift_region_ids describe the post-shift image, so
// window cells index the id map directly. returns (nWin, ws^2, ws^2)
template <typename S>
Tensor<S> shifted_window_mask(int64_t h, int64_t w, int64_t ws, int64_t shift) {
    auto ids = shift_region_ids(h, w, ws, shift);
    (void)shift;
    int64_t nh = h / ws, nw = w / ws, S2 = ws * ws;
    Tensor<S> mask({nh * nw, S2, S2});
    std::vector<int> wid(static_cast<size_t>(S2));
    for (int64_t wy = 0; wy < nh; ++wy)
        for (int64_t wx = 0; wx < nw; ++wx) {
            for (int64_t a = 0; a < S2; ++a) {
                int64_t y = wy * ws + a / ws;
                int64_t x = wx * ws + a % ws;
                wid[a] = ids[y * w + x];
            }
            S* m = mask.data.data() + (wy * nw + wx) * S2 * S2;
            for (int64_t a = 0; a < S2; ++a)
                for (int64_t b = 0; b < S2; ++b)
                    m[a * S2 + b] = (wid[a] == wid[b]) ? S(0) : S(-1e9);
        }
    return mask;
}

// windowed multi-head self-attention with learned relative-position bias
template <typename S>
struct WindowAttention {
    Linear<S> qkv, proj;
    Var<S> bias_table;  // ((2ws-1)^2, heads); null when bias disabled
    int64_t dim = 0, heads = 1, ws = 0;

    WindowAttention() = default;
    template <typename Rng>
    WindowAttention(int64_t dim_, int64_t heads_, int64_t ws_, Rng& rng, bool rel_bias = true,
                    S w_std = S(0.02))
        : qkv(dim_, 3 * dim_, rng, w_std), proj(dim_, dim_, rng, w_std), dim(dim_), heads(heads_),
          ws(ws_) {
        check(dim_ % heads_ == 0, "window_attention: dim not divisible by heads");
        if (rel_bias)
            bias_table =
                leaf(Tensor<S>::randn({(2 * ws_ - 1) * (2 * ws_ - 1), heads_}, rng, S(0.02)),
                     "bias_table");
    }

    // windows: (nw, ws^2, D); mask: (nWinPerMap, ws^2, ws^2) or null, where
    // nw is a multiple of nWinPerMap
    Var<S> forward(const Var<S>& windows, const Tensor<S>* mask = nullptr) const {
        int64_t nw = windows->value.dim(0), S2 = windows->value.dim(1);
        check(S2 == ws * ws, "window_attention: token count != ws^2");
        int64_t dh = dim / heads;
        auto flat = reshape(windows, {nw * S2, dim});
        auto split = reshape(qkv.forward(flat), {nw, S2, 3, heads, dh});
        split = permute(split, {2, 0, 3, 1, 4});  // (3, nw, heads, S2, dh)
        auto q = reshape(take_axis0(split, {0}), {nw * heads, S2, dh});
        auto k = reshape(take_axis0(split, {1}), {nw * heads, S2, dh});
        auto v = reshape(take_axis0(split, {2}), {nw * heads, S2, dh});
        q = scale(q, static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh))));
        auto logits = bmm(q, transpose_last2(k));  // (nw*heads, S2, S2)
        if (bias_table) {
            auto bias = rows_lookup(bias_table, relative_position_index(ws));  // (S2*S2, heads)
            bias = permute(reshape(bias, {S2, S2, heads}), {2, 0, 1});         // (heads, S2, S2)
            bias = reshape(broadcast_axis(reshape(bias, {1, heads, S2, S2}), 0, nw),
                           {nw * heads, S2, S2});
            logits = add(logits, bias);
        }
        if (mask) {
            check(nw % mask->dim(0) == 0, "window_attention: mask count mismatch");
            int64_t reps = nw / mask->dim(0);
            Tensor<S> full({nw * heads, S2, S2});
            for (int64_t r = 0; r < reps; ++r)
                for (int64_t m = 0; m < mask->dim(0); ++m)
                    for (int64_t hh = 0; hh < heads; ++hh)
                        std::copy_n(mask->data.begin() + m * S2 * S2, S2 * S2,
                                    full.data.begin() + ((r * mask->dim(0) + m) * heads + hh) * S2 * S2);
            logits = add_const(logits, full);
        }
        auto attn = softmax_lastdim(logits);
        auto ctx = bmm(attn, v);  // (nw*heads, S2, dh)
        ctx = reshape(permute(reshape(ctx, {nw, heads, S2, dh}), {0, 2, 1, 3}), {nw * S2, dim});
        return reshape(proj.forward(ctx), {nw, S2, dim});
    }

    void collect(NamedParams<S>& out, const std::string& prefix) const {
        qkv.collect(out, prefix + ".qkv");
        proj.collect(out, prefix + ".proj");
        if (bias_table) out.push_back({prefix + ".bias_table", bias_table});
    }
};

// two-sublayer Swin transformer block: W-MSA then SW-MSA, each pre-norm with
// residual + MLP
template <typename S>
struct SwinBlock {
    LayerNormLayer<S> ln1, ln2, ln3, ln4;
    WindowAttention<S> attn1, attn2;
    MlpLayer<S> mlp1, mlp2;
    int64_t dim = 0, ws = 0, shift = 0;

    SwinBlock() = default;
    template <typename Rng>
    SwinBlock(int64_t dim_, int64_t heads, int64_t ws_, int64_t mlp_ratio, Rng& rng,
              bool rel_bias = true, S slope = S(0.2))
        : ln1(dim_), ln2(dim_), ln3(dim_), ln4(dim_),
          attn1(dim_, heads, ws_, rng, rel_bias),
          attn2(dim_, heads, ws_, rng, rel_bias),
          mlp1(dim_, dim_ * mlp_ratio, rng, slope),
          mlp2(dim_, dim_ * mlp_ratio, rng, slope),
          dim(dim_), ws(ws_), shift(ws_ / 2) {}

    // grid: (B, h, w, D) -> same shape
    Var<S> forward(const Var<S>& grid) const {
        int64_t B = grid->value.dim(0), h = grid->value.dim(1), w = grid->value.dim(2);
        bool do_shift = shift > 0 && (h > ws || w > ws);

        // sublayer 1: W-MSA
        auto x = grid;
        auto a1 = attn1.forward(window_partition(ln1.forward(x), ws));
        x = add(x, window_reverse(a1, ws, B, h, w));
        x = add(x, mlp1.forward(ln2.forward(x)));

        // sublayer 2: SW-MSA (cyclic shift when the grid is larger than one window)
        auto branch = ln3.forward(x);
        if (do_shift) {
            branch = roll_hw(branch, -shift, -shift);
            Tensor<S> mask = shifted_window_mask<S>(h, w, ws, shift);
            auto a2 = attn2.forward(window_partition(branch, ws), &mask);
            branch = roll_hw(window_reverse(a2, ws, B, h, w), shift, shift);
        } else {
            auto a2 = attn2.forward(window_partition(branch, ws));
            branch = window_reverse(a2, ws, B, h, w);
        }
        x = add(x, branch);
        x = add(x, mlp2.forward(ln4.forward(x)));
        return x;
    }

    void collect(NamedParams<S>& out, const std::string& prefix) const {
        ln1.collect(out, prefix + ".ln1");
        attn1.collect(out, prefix + ".attn1");
        ln2.collect(out, prefix + ".ln2");
        mlp1.collect(out, prefix + ".mlp1");
        ln3.collect(out, prefix + ".ln3");
        attn2.collect(out, prefix + ".attn2");
        ln4.collect(out, prefix + ".ln4");
        mlp2.collect(out, prefix + ".mlp2");
    }
};

}  // namespace sft
