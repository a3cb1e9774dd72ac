#pragma once

// Frequency-enhanced temporal modeling: a real FFT along the time axis
// expressed as constant DFT matrices (so gradients flow through ordinary
// matmuls), a learned per-mode complex channel-mixing kernel, and the
// temporal layer combining full self-attention with the frequency branch.

#include "sft/nn.hpp"

namespace sft {

// Half-spectrum real-DFT analysis matrices with orthonormal scaling:
//   Qre = Fc * u, Qim = Fs * u, u in R^{T x d}, Q in C^{(T/2+1) x d}
template <typename S>
void real_dft_matrices(int64_t T, Tensor<S>& Fc, Tensor<S>& Fs) {
    int64_t Mh = T / 2 + 1;
    Fc = Tensor<S>({Mh, T});
    Fs = Tensor<S>({Mh, T});
    double norm = 1.0 / std::sqrt(static_cast<double>(T));
    for (int64_t m = 0; m < Mh; ++m)
        for (int64_t t = 0; t < T; ++t) {
            double a = 2.0 * M_PI * static_cast<double>(m * t) / static_cast<double>(T);
            Fc[m * T + t] = static_cast<S>(std::cos(a) * norm);
            Fs[m * T + t] = static_cast<S>(-std::sin(a) * norm);
        }
}

// Synthesis matrices folding in the Hermitian-symmetry weights, restricted
// to the first `modes` columns (higher modes are zeroed):
//   u = Ic * Yre + Is * Yim
template <typename S>
void real_idft_matrices(int64_t T, int64_t modes, Tensor<S>& Ic, Tensor<S>& Is) {
    Ic = Tensor<S>({T, modes});
    Is = Tensor<S>({T, modes});
    double norm = 1.0 / std::sqrt(static_cast<double>(T));
    for (int64_t t = 0; t < T; ++t)
        for (int64_t m = 0; m < modes; ++m) {
            double wgt = (m == 0 || (T % 2 == 0 && m == T / 2)) ? 1.0 : 2.0;
            double a = 2.0 * M_PI * static_cast<double>(m * t) / static_cast<double>(T);
            Ic[t * modes + m] = static_cast<S>(wgt * std::cos(a) * norm);
            Is[t * modes + m] = static_cast<S>(-wgt * std::sin(a) * norm);
        }
}

// learned complex per-mode channel mixer with input/output projections
template <typename S>
struct FrequencyKernel {
    Var<S> Rre, Rim;          // (modes, d_feb, d_feb)
    Linear<S> proj_in;        // P -> d_feb
    Linear<S> proj_out;       // d_feb -> P
    int64_t T = 0, P = 0, d_feb = 0, modes = 0;

    FrequencyKernel() = default;
    // modes_req <= T/2+1; pass 0 to keep all real-FFT modes
    template <typename Rng>
    FrequencyKernel(int64_t T_, int64_t P_, int64_t d_, int64_t modes_req, Rng& rng)
        : proj_in(P_, d_, rng), proj_out(d_, P_, rng), T(T_), P(P_), d_feb(d_) {
        check(T_ >= 2, "frequency kernel: T must be >= 2");
        int64_t Mh = T_ / 2 + 1;
        modes = (modes_req <= 0 || modes_req > Mh) ? Mh : modes_req;
        S std = S(1) / static_cast<S>(d_);
        Rre = leaf(Tensor<S>::randn({modes, d_, d_}, rng, std), "Rre");
        Rim = leaf(Tensor<S>::randn({modes, d_, d_}, rng, std), "Rim");
    }

    void collect(NamedParams<S>& out, const std::string& prefix) const {
        out.push_back({prefix + ".Rre", Rre});
        out.push_back({prefix + ".Rim", Rim});
        proj_in.collect(out, prefix + ".proj_in");
        proj_out.collect(out, prefix + ".proj_out");
    }
};

// FEB: project, FFT along time, mix channels per retained mode with the
// complex kernel, inverse FFT, project back.  z_t: (T, P) -> (T, P)
template <typename S>
Var<S> feb_forward(const Var<S>& z_t, const FrequencyKernel<S>& kern, const MlpLayer<S>& mlp) {
    check(z_t->value.rank() == 2, "feb_forward: expects (T, P)");
    int64_t T = z_t->value.dim(0);
    if (T < 2) throw config_error("feb_forward: sequence length must be >= 2");
    check(T == kern.T && z_t->value.dim(1) == kern.P, "feb_forward: shape/config mismatch");

    auto u = kern.proj_in.forward(reshape(mlp.forward(z_t), {T, kern.P}));  // (T, d)

    Tensor<S> FcT, FsT;
    real_dft_matrices<S>(T, FcT, FsT);
    auto Fc = constant(std::move(FcT)), Fs = constant(std::move(FsT));
    auto Qre = matmul(Fc, u);  // (Mh, d)
    auto Qim = matmul(Fs, u);

    // keep the first `modes` modes; Hermitian symmetry handles the rest
    std::vector<int64_t> keep(static_cast<size_t>(kern.modes));
    for (int64_t m = 0; m < kern.modes; ++m) keep[m] = m;
    auto qre = reshape(take_axis0(Qre, keep), {kern.modes, 1, kern.d_feb});
    auto qim = reshape(take_axis0(Qim, keep), {kern.modes, 1, kern.d_feb});

    // complex per-mode matvec: Y[m] = Q[m] * R[m]
    auto yre = sub(bmm(qre, kern.Rre), bmm(qim, kern.Rim));
    auto yim = add(bmm(qre, kern.Rim), bmm(qim, kern.Rre));
    yre = reshape(yre, {kern.modes, kern.d_feb});
    yim = reshape(yim, {kern.modes, kern.d_feb});

    Tensor<S> IcT, IsT;
    real_idft_matrices<S>(T, kern.modes, IcT, IsT);
    auto back = add(matmul(constant(std::move(IcT)), yre),
                    matmul(constant(std::move(IsT)), yim));  // (T, d)
    return kern.proj_out.forward(back);                      // (T, P)
}

// temporal modeling layer: 1x1-conv embedding to (T, h*w), temporal MSA and
// FEB branches (post-norm residuals, as the block is written), channel copy
// back to (T, C, h, w)
template <typename S>
struct TemporalLayer {
    Conv2dLayer<S> embed;     // C -> 1, 1x1
    LayerNormLayer<S> norm;   // over P after flatten
    MultiHeadAttention<S> msa;
    LayerNormLayer<S> ln_msa;
    FrequencyKernel<S> feb;
    MlpLayer<S> feb_mlp;      // P -> P
    LayerNormLayer<S> ln_feb;
    int64_t C = 0, P = 0;

    TemporalLayer() = default;
    template <typename Rng>
    TemporalLayer(int64_t T, int64_t C_, int64_t h, int64_t w, int64_t heads, int64_t d_feb,
                  int64_t modes, Rng& rng, S slope = S(0.2))
        : embed(C_, 1, 1, 1, 0, rng),
          norm(h * w),
          msa(h * w, heads, rng),
          ln_msa(h * w),
          feb(T, h * w, d_feb, modes, rng),
          feb_mlp(h * w, h * w, rng, slope),
          ln_feb(h * w),
          C(C_), P(h * w) {}

    // z: (T, C, h, w) -> f_t: (T, C, h, w)
    Var<S> forward(const Var<S>& z) const {
        int64_t T = z->value.dim(0), h = z->value.dim(2), w = z->value.dim(3);
        auto zt = norm.forward(reshape(embed.forward(z), {T, P}));       // (T, P)
        auto za = add(ln_msa.forward(msa.forward(zt)), zt);              // MSA branch
        auto zb = add(ln_feb.forward(feb_forward(zt, feb, feb_mlp)), zt);  // FEB branch
        auto f = add(za, zb);
        return broadcast_axis(reshape(f, {T, 1, h, w}), 1, C);
    }

    void collect(NamedParams<S>& out, const std::string& prefix) const {
        embed.collect(out, prefix + ".embed");
        norm.collect(out, prefix + ".norm");
        msa.collect(out, prefix + ".msa");
        ln_msa.collect(out, prefix + ".ln_msa");
        feb.collect(out, prefix + ".feb");
        feb_mlp.collect(out, prefix + ".feb_mlp");
        ln_feb.collect(out, prefix + ".ln_feb");
    }
};

}  // namespace sft
