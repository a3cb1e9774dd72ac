#pragma once

// Prediction-reconstruction branch: odd-minus-even motion features, motion
// pattern mining with N-1 swin blocks aliased to the spatial refinement
// layers, and the SE-gated two-stage reconstruction of odd frames.

#include "sft/window_attention.hpp"

namespace sft {

template <typename S>
std::vector<int64_t> even_indices(int64_t T) {
    std::vector<int64_t> idx;
    for (int64_t i = 0; i < T; i += 2) idx.push_back(i);
    return idx;
}
template <typename S>
std::vector<int64_t> odd_indices(int64_t T) {
    std::vector<int64_t> idx;
    for (int64_t i = 1; i < T; i += 2) idx.push_back(i);
    return idx;
}

// D[i] = H[2i+1] - H[2i]
template <typename S>
Var<S> motion_init(const Var<S>& H) {
    int64_t T = H->value.dim(0);
    if (T % 2 != 0) throw config_error("motion_init: sequence length must be even");
    return sub(take_axis0(H, odd_indices<S>(T)), take_axis0(H, even_indices<S>(T)));
}

template <typename S>
struct MotionPatternMining {
    Conv2dLayer<S> lift;                                  // own 1x1, C -> 2C
    std::vector<std::shared_ptr<SwinBlock<S>>> shared;    // aliased with s_swin of blocks 0..N-2
    std::shared_ptr<SwinBlock<S>> own;                    // independent final block
    Linear<S> ret;                                        // own 2C -> C
    int64_t C = 0;

    MotionPatternMining() = default;
    template <typename Rng>
    MotionPatternMining(int64_t C_, int64_t heads, int64_t ws, int64_t mlp_ratio,
                        std::vector<std::shared_ptr<SwinBlock<S>>> shared_, Rng& rng,
                        bool rel_bias = true, S slope = S(0.2))
        : lift(C_, 2 * C_, 1, 1, 0, rng),
          shared(std::move(shared_)),
          own(std::make_shared<SwinBlock<S>>(2 * C_, heads, ws, mlp_ratio, rng, rel_bias, slope)),
          ret(2 * C_, C_, rng, S(0.02)),
          C(C_) {}

    // D: (T/2, C, h, w) -> D': same shape
    Var<S> forward(const Var<S>& D) const {
        int64_t Th = D->value.dim(0), h = D->value.dim(2), w = D->value.dim(3);
        auto x = permute(lift.forward(D), {0, 2, 3, 1});  // (T/2, h, w, 2C)
        for (const auto& blk : shared) x = blk->forward(x);
        x = own->forward(x);
        auto flat = reshape(x, {Th * h * w, 2 * C});
        return permute(reshape(ret.forward(flat), {Th, h, w, C}), {0, 3, 1, 2});
    }

    // shared blocks are collected too; dedupe against the SFT stack by identity
    void collect(NamedParams<S>& out, const std::string& prefix) const {
        lift.collect(out, prefix + ".lift");
        own->collect(out, prefix + ".own");
        ret.collect(out, prefix + ".ret");
    }
    void collect_own_only(NamedParams<S>& out, const std::string& prefix) const {
        collect(out, prefix);
    }
};

template <typename S>
struct ReconstructionModule {
    Conv2dLayer<S> conv1, conv2;  // 2C -> C, 3x3
    SEBlock<S> se1, se2;
    S slope = S(0.2);

    ReconstructionModule() = default;
    template <typename Rng>
    ReconstructionModule(int64_t C, int64_t se_ratio, Rng& rng, S slope_ = S(0.2))
        : conv1(2 * C, C, 3, 1, 1, rng),
          conv2(2 * C, C, 3, 1, 1, rng),
          se1(C, se_ratio, rng, slope_),
          se2(C, se_ratio, rng, slope_),
          slope(slope_) {}

    struct Out {
        Var<S> x_hat_odd;   // (T/2, C, h, w)
        Var<S> loss_recon;  // scalar
    };

    // H_prime: last stack output (T,C,h,w); D_prime: (T/2,C,h,w);
    // H: initial embedding (T,C,h,w) supplying the odd-frame targets
    Out forward(const Var<S>& H_prime, const Var<S>& D_prime, const Var<S>& H) const {
        int64_t T = H_prime->value.dim(0);
        if (T % 2 != 0) throw config_error("reconstruct_odd: sequence length must be even");
        auto even = even_indices<S>(T), odd = odd_indices<S>(T);
        auto hp_even = take_axis0(H_prime, even);
        auto hp_odd = take_axis0(H_prime, odd);

        auto stage1 = se1.forward(
            leaky_relu(conv1.forward(concat_axis(1, hp_even, D_prime)), slope));
        auto x_hat = se2.forward(
            leaky_relu(conv2.forward(concat_axis(1, hp_odd, stage1)), slope));

        // (1/(2T)) * sum over T/2 odd frames of the per-frame element mean of the
        // squared residual
        auto diff = sub(x_hat, take_axis0(H, odd));
        auto per_elem = mean_all(mul(diff, diff));  // mean over (T/2, C, h, w)
        auto loss = scale(per_elem, static_cast<S>(T / 2) / static_cast<S>(2 * T));
        return {x_hat, loss};
    }

    void collect(NamedParams<S>& out, const std::string& prefix) const {
        conv1.collect(out, prefix + ".conv1");
        se1.collect(out, prefix + ".se1");
        conv2.collect(out, prefix + ".conv2");
        se2.collect(out, prefix + ".se2");
    }
};

}  // namespace sft
