#pragma once

// End-to-end model: embedding encoder, stacked SFT blocks, forecasting
// decoder, and the reconstruction branch evaluated on the same pass.

#include <json.hpp>

#include "sft/embed_decode.hpp"
#include "sft/reconstruction.hpp"
#include "sft/sft_block.hpp"

namespace sft {

struct ModelConfig {
    // architecture
    int64_t embed_depth = 4;   // encoder/decoder layer count (the conv plan assumes 4)
    int64_t depth_n = 8;       // SFT block count
    int64_t channels = 64;     // latent channels C
    int64_t t_in = 10;
    int64_t t_out = 10;
    int64_t height = 128;
    int64_t width = 128;
    int64_t window_size = 8;
    int64_t heads = 4;
    int64_t mlp_ratio = 4;
    int64_t d_feb = 64;
    int64_t feb_modes = 0;     // 0 = keep all real-FFT modes
    int64_t gn_groups = 8;
    int64_t se_ratio = 4;
    double lambda = 0.01;
    double leaky_slope = 0.2;
    bool rel_bias = true;
    uint64_t seed = 0;
    // training
    double lr_max = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 1.0;
    int64_t batch_size = 4;
    int64_t steps = 1000;
    int64_t window_width = 20;
    int64_t window_stride = 5;
    int64_t checkpoint_every = 500;

    int64_t latent_h() const { return height / 4; }
    int64_t latent_w() const { return width / 4; }

    void validate() const {
        if (embed_depth != 4)
            throw config_error("config: the embedding conv plan is defined for depth 4");
        if (depth_n < 1) throw config_error("config: depth_n must be >= 1");
        if (channels < 2 || channels % 2 != 0)
            throw config_error("config: channels must be even and >= 2");
        if (t_in < 2 || t_in % 2 != 0)
            throw config_error("config: t_in must be even and >= 2");
        if (t_out < 1) throw config_error("config: t_out must be >= 1");
        if (height % 4 != 0 || width % 4 != 0)
            throw config_error("config: height and width must be divisible by 4");
        if (latent_h() % window_size != 0 || latent_w() % window_size != 0)
            throw config_error("config: latent dims " + std::to_string(latent_h()) + "x" +
                               std::to_string(latent_w()) +
                               " must be divisible by window_size " +
                               std::to_string(window_size));
        if (window_width <= t_in) throw config_error("config: window_width must exceed t_in");
        if (window_stride < 1) throw config_error("config: window_stride must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"embed_depth", c.embed_depth}, {"depth_n", c.depth_n},
                       {"channels", c.channels},       {"t_in", c.t_in},
                       {"t_out", c.t_out},             {"height", c.height},
                       {"width", c.width},             {"window_size", c.window_size},
                       {"heads", c.heads},             {"mlp_ratio", c.mlp_ratio},
                       {"d_feb", c.d_feb},             {"feb_modes", c.feb_modes},
                       {"gn_groups", c.gn_groups},     {"se_ratio", c.se_ratio},
                       {"lambda", c.lambda},           {"leaky_slope", c.leaky_slope},
                       {"rel_bias", c.rel_bias},       {"seed", c.seed},
                       {"lr_max", c.lr_max},           {"beta1", c.beta1},
                       {"beta2", c.beta2},             {"adam_eps", c.adam_eps},
                       {"clip_norm", c.clip_norm},     {"batch_size", c.batch_size},
                       {"steps", c.steps},             {"window_width", c.window_width},
                       {"window_stride", c.window_stride},
                       {"checkpoint_every", c.checkpoint_every}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d;
#define SFT_GET(field) c.field = j.value(#field, d.field)
    SFT_GET(embed_depth); SFT_GET(depth_n); SFT_GET(channels); SFT_GET(t_in); SFT_GET(t_out);
    SFT_GET(height); SFT_GET(width); SFT_GET(window_size); SFT_GET(heads); SFT_GET(mlp_ratio);
    SFT_GET(d_feb); SFT_GET(feb_modes); SFT_GET(gn_groups); SFT_GET(se_ratio); SFT_GET(lambda);
    SFT_GET(leaky_slope); SFT_GET(rel_bias); SFT_GET(seed); SFT_GET(lr_max); SFT_GET(beta1);
    SFT_GET(beta2); SFT_GET(adam_eps); SFT_GET(clip_norm); SFT_GET(batch_size); SFT_GET(steps);
    SFT_GET(window_width); SFT_GET(window_stride); SFT_GET(checkpoint_every);
#undef SFT_GET
}

inline std::string config_hash(const ModelConfig& c) {
    nlohmann::json j = c;
    std::string s = j.dump();
    uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

template <typename S>
struct Model {
    ModelConfig cfg;
    Encoder<S> encoder;
    Decoder<S> decoder;
    std::vector<SFTBlock<S>> blocks;
    MotionPatternMining<S> mpm;
    ReconstructionModule<S> recon;
    Var<S> time_emb;  // (t_out, C) per-step embedding; null when t_out == t_in

    explicit Model(ModelConfig c) : cfg(std::move(c)) {
        cfg.validate();
        std::mt19937_64 rng(cfg.seed);
        S slope = static_cast<S>(cfg.leaky_slope);
        encoder = Encoder<S>(cfg.channels, cfg.gn_groups, rng, slope);
        decoder = Decoder<S>(cfg.channels, cfg.gn_groups, rng, slope);
        blocks.reserve(cfg.depth_n);
        for (int64_t k = 0; k < cfg.depth_n; ++k)
            blocks.emplace_back(cfg.t_in, cfg.channels, cfg.latent_h(), cfg.latent_w(), cfg.heads,
                                cfg.window_size, cfg.mlp_ratio, cfg.d_feb, cfg.feb_modes, rng,
                                cfg.rel_bias, slope);
        // motion branch shares the spatial refinement swin blocks of the first N-1 blocks
        std::vector<std::shared_ptr<SwinBlock<S>>> shared;
        for (int64_t k = 0; k + 1 < cfg.depth_n; ++k) shared.push_back(blocks[k].s_swin);
        mpm = MotionPatternMining<S>(cfg.channels, cfg.heads, cfg.window_size, cfg.mlp_ratio,
                                     std::move(shared), rng, cfg.rel_bias, slope);
        recon = ReconstructionModule<S>(cfg.channels, cfg.se_ratio, rng, slope);
        if (cfg.t_out != cfg.t_in)
            time_emb = leaf(Tensor<S>::randn({cfg.t_out, cfg.channels}, rng, S(0.02)), "time_emb");
    }

    struct Forward {
        Var<S> pred;        // (t_out, 1, H, W)
        Var<S> loss_recon;  // scalar
        Var<S> latent;      // initial embedding H
        Var<S> stack_out;   // H'
    };

    Forward forward(const Var<S>& x) const {
        check(x->value.rank() == 4 && x->value.dim(0) == cfg.t_in && x->value.dim(1) == 1 &&
                  x->value.dim(2) == cfg.height && x->value.dim(3) == cfg.width,
              "forward: input shape mismatch, got " + x->value.shape_str());
        auto emb = encoder.forward(x);
        if (!emb.latent->value.all_finite())
            throw numerical_error("feature embedding produced non-finite values");
        auto stack_out = stack_forward(emb.latent, blocks);
        if (!stack_out->value.all_finite())
            throw numerical_error("SFT stack produced non-finite values");

        // reconstruction branch on the same pass
        auto d_prime = mpm.forward(motion_init(emb.latent));
        auto rec = recon.forward(stack_out, d_prime, emb.latent);

        // long-horizon decoding: tile the stack output (and skip) along time,
        // add a learned per-step embedding, then decode
        Var<S> dec_in = stack_out, skip = emb.skip;
        if (cfg.t_out != cfg.t_in) {
            std::vector<int64_t> idx(static_cast<size_t>(cfg.t_out));
            for (int64_t t = 0; t < cfg.t_out; ++t) idx[t] = t % cfg.t_in;
            dec_in = add_tc_bias(take_axis0(stack_out, idx), time_emb);
            skip = take_axis0(emb.skip, idx);
        }
        auto pred = decoder.forward(dec_in, skip);
        if (!pred->value.all_finite())
            throw numerical_error("forecasting decoder produced non-finite values");
        return {pred, rec.loss_recon, emb.latent, stack_out};
    }

    Forward forward(const Tensor<S>& x) const { return forward(constant(x, "input")); }

    NamedParams<S> params() const {
        NamedParams<S> all;
        encoder.collect(all, "encoder");
        for (size_t k = 0; k < blocks.size(); ++k)
            blocks[k].collect(all, "block" + std::to_string(k));
        decoder.collect(all, "decoder");
        mpm.collect(all, "mpm");
        recon.collect(all, "recon");
        if (time_emb) all.push_back({"time_emb", time_emb});
        return unique_params(all);
    }
};

template <typename S>
Var<S> joint_loss(const Var<S>& y_hat, const Var<S>& y, const Var<S>& loss_recon, S lambda) {
    auto l = mse(y_hat, y);
    if (lambda != S(0)) l = add(l, scale(loss_recon, lambda));
    return l;
}

}  // namespace sft
