#pragma once

// Feature-embedding encoder and forecasting decoder bracketing the SFT
// stack. Convolutions are shared across time (frames are the batch dim);
// strides follow the alternating 1,2 pattern so M=4 gives a 4x spatial
// reduction. The layer-2 encoder output is kept as the decoder skip.

#include "sft/nn.hpp"

namespace sft {

template <typename S>
struct Encoder {
    std::vector<Conv2dLayer<S>> convs;
    std::vector<GroupNormLayer<S>> norms;
    S slope = S(0.2);

    Encoder() = default;
    // channel plan 1 -> C/2 -> C/2 -> C -> C, strides 1,2,1,2
    template <typename Rng>
    Encoder(int64_t C, int64_t gn_groups, Rng& rng, S slope_ = S(0.2)) : slope(slope_) {
        int64_t mid = C / 2;
        int64_t plan[5] = {1, mid, mid, C, C};
        for (int j = 0; j < 4; ++j) {
            int64_t stride = (j % 2 == 1) ? 2 : 1;  // layers 2 and 4 downsample
            convs.emplace_back(plan[j], plan[j + 1], 3, stride, 1, rng);
            norms.emplace_back(plan[j + 1], std::min(gn_groups, plan[j + 1]));
        }
    }

    struct Out {
        Var<S> latent;  // (T, C, H/4, W/4)
        Var<S> skip;    // layer-2 output, (T, C/2, H/2, W/2)
    };

    Out forward(const Var<S>& x) const {
        check(x->value.rank() == 4, "encoder: expects (T,1,H,W)");
        if (x->value.dim(2) % 4 != 0 || x->value.dim(3) % 4 != 0)
            throw config_error("encoder: H and W must be divisible by 4, got " +
                               x->value.shape_str());
        Var<S> h = x, skip;
        for (size_t j = 0; j < convs.size(); ++j) {
            h = leaky_relu(norms[j].forward(convs[j].forward(h)), slope);
            if (j == 1) skip = h;
        }
        return {h, skip};
    }

    void collect(NamedParams<S>& out, const std::string& prefix) const {
        for (size_t j = 0; j < convs.size(); ++j) {
            convs[j].collect(out, prefix + ".conv" + std::to_string(j));
            norms[j].collect(out, prefix + ".norm" + std::to_string(j));
        }
    }
};

template <typename S>
struct Decoder {
    std::vector<ConvTranspose2dLayer<S>> convs;
    std::vector<GroupNormLayer<S>> norms;  // none for the final layer
    S slope = S(0.2);

    Decoder() = default;
    // mirrored plan C -> C -> C/2 -> C/2 -> 1, strides 1,2,1,2
    template <typename Rng>
    Decoder(int64_t C, int64_t gn_groups, Rng& rng, S slope_ = S(0.2)) : slope(slope_) {
        int64_t mid = C / 2;
        int64_t plan[5] = {C, C, mid, mid, 1};
        for (int j = 0; j < 4; ++j) {
            int64_t stride = (j % 2 == 1) ? 2 : 1;
            int64_t k = stride == 2 ? 4 : 3;  // even kernel keeps stride-2 output exact
            convs.emplace_back(plan[j], plan[j + 1], k, stride, 1, rng);
            if (j < 3) norms.emplace_back(plan[j + 1], std::min(gn_groups, plan[j + 1]));
        }
    }

    // latent (T,C,h,w), skip (T,C/2,2h,2w) added before the final upsample
    Var<S> forward(const Var<S>& latent, const Var<S>& skip) const {
        Var<S> h = latent;
        for (size_t j = 0; j < convs.size(); ++j) {
            if (j == 3) {
                if (!h->value.same_shape(skip->value))
                    throw config_error("decoder: skip shape " + skip->value.shape_str() +
                                       " does not match " + h->value.shape_str());
                h = add(h, skip);
            }
            h = convs[j].forward(h);
            if (j < 3) h = leaky_relu(norms[j].forward(h), slope);
        }
        return h;
    }

    void collect(NamedParams<S>& out, const std::string& prefix) const {
        for (size_t j = 0; j < convs.size(); ++j) {
            convs[j].collect(out, prefix + ".conv" + std::to_string(j));
            if (j < norms.size()) norms[j].collect(out, prefix + ".norm" + std::to_string(j));
        }
    }
};

}  // namespace sft
