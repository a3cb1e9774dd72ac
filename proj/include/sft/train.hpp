#pragma once

// Joint-loss training loop: Adam with one-cycle learning-rate schedule,
// global gradient-norm clipping, deterministic shuffling, JSONL step logs,
// periodic checkpoints, and the finite-difference gradient-check harness.

#include <iostream>
#include <sstream>

#include "sft/checkpoint.hpp"
#include "sft/metrics.hpp"

namespace sft {

template <typename S>
struct Adam {
    std::vector<Var<S>> params;
    std::vector<Tensor<S>> m, v;
    int64_t t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    Adam() = default;
    Adam(const NamedParams<S>& named, double b1, double b2, double eps_)
        : beta1(b1), beta2(b2), eps(eps_) {
        for (const auto& [name, p] : named) {
            params.push_back(p);
            m.push_back(Tensor<S>::zeros(p->value.shape));
            v.push_back(Tensor<S>::zeros(p->value.shape));
        }
    }

    void zero_grad() {
        for (auto& p : params) sft::zero_grad(p);
    }

    double grad_norm() const {
        double s = 0.0;
        for (const auto& p : params) {
            if (!p->has_grad) continue;
            for (S g : p->grad.data) s += static_cast<double>(g) * static_cast<double>(g);
        }
        return std::sqrt(s);
    }

    void clip(double max_norm) {
        double n = grad_norm();
        if (n <= max_norm || n == 0.0) return;
        S f = static_cast<S>(max_norm / n);
        for (auto& p : params) {
            if (!p->has_grad) continue;
            for (S& g : p->grad.data) g *= f;
        }
    }

    void step(double lr) {
        ++t;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            if (!p->has_grad) continue;
            for (int64_t k = 0; k < p->value.numel(); ++k) {
                double g = static_cast<double>(p->grad[k]);
                double mk = beta1 * static_cast<double>(m[i][k]) + (1.0 - beta1) * g;
                double vk = beta2 * static_cast<double>(v[i][k]) + (1.0 - beta2) * g * g;
                m[i][k] = static_cast<S>(mk);
                v[i][k] = static_cast<S>(vk);
                double update = lr * (mk / bc1) / (std::sqrt(vk / bc2) + eps);
                p->value[k] = static_cast<S>(static_cast<double>(p->value[k]) - update);
            }
        }
    }
};

// one-cycle schedule: cosine ramp from lr_max/25 up over the first 30% of
// steps, cosine anneal down to lr_max/2.5e5 afterwards
inline double one_cycle_lr(int64_t step, int64_t total_steps, double lr_max) {
    double pct_start = 0.3;
    double lr0 = lr_max / 25.0, lr_end = lr0 / 1e4;
    auto cos_interp = [](double a, double b, double frac) {
        return b + (a - b) * 0.5 * (1.0 + std::cos(M_PI * frac));
    };
    double up = pct_start * static_cast<double>(total_steps);
    double s = static_cast<double>(std::min(step, total_steps - 1));
    if (s < up) return cos_interp(lr0, lr_max, s / std::max(up, 1.0));
    double frac = (s - up) / std::max(static_cast<double>(total_steps) - up, 1.0);
    return cos_interp(lr_max, lr_end, frac);
}

template <typename S>
Tensor<S> sequence_to_tensor(const EchoSequence& seq) {
    Tensor<S> t({seq.t, 1, seq.h, seq.w});
    for (size_t i = 0; i < seq.frames.size(); ++i) t[i] = static_cast<S>(seq.frames[i]);
    return t;
}

template <typename S>
EchoSequence tensor_to_sequence(const Tensor<S>& t, int interval_min = 6,
                                const std::string& source_id = "") {
    check(t.rank() == 4 && t.dim(1) == 1, "tensor_to_sequence: expects (T,1,H,W)");
    EchoSequence seq;
    seq.t = t.dim(0);
    seq.h = t.dim(2);
    seq.w = t.dim(3);
    seq.interval_min = interval_min;
    seq.source_id = source_id;
    seq.frames.resize(static_cast<size_t>(t.numel()));
    for (int64_t i = 0; i < t.numel(); ++i) seq.frames[i] = static_cast<float>(t[i]);
    return seq;
}

template <typename S>
struct StepStats {
    double loss = 0, mse = 0, recon = 0, lr = 0;
};

template <typename S>
struct Trainer {
    Model<S>& model;
    Adam<S> opt;
    std::mt19937_64 rng;
    int64_t step = 0;

    explicit Trainer(Model<S>& m)
        : model(m),
          opt(m.params(), m.cfg.beta1, m.cfg.beta2, m.cfg.adam_eps),
          rng(m.cfg.seed ^ 0x9e3779b97f4a7c15ull) {}

    // one optimizer step over a mini-batch of windows; grads averaged over
    // the batch, clipped, then applied at the scheduled learning rate
    StepStats<S> train_step(const std::vector<const SequenceWindow*>& batch, int64_t total_steps) {
        opt.zero_grad();
        StepStats<S> stats;
        S lambda = static_cast<S>(model.cfg.lambda);
        for (const auto* win : batch) {
            check(win->target.t == model.cfg.t_out, "train_step: target length != t_out");
            auto x = constant(sequence_to_tensor<S>(win->input), "x");
            auto y = constant(sequence_to_tensor<S>(win->target), "y");
            auto fw = model.forward(x);
            auto mse_term = mse(fw.pred, y);
            auto loss = lambda != S(0) ? add(mse_term, scale(fw.loss_recon, lambda)) : mse_term;
            if (!std::isfinite(static_cast<double>(loss->value[0])))
                throw numerical_error("train_step: non-finite loss at step " +
                                      std::to_string(step));
            backward(loss);
            stats.loss += static_cast<double>(loss->value[0]);
            stats.mse += static_cast<double>(mse_term->value[0]);
            stats.recon += static_cast<double>(fw.loss_recon->value[0]);
        }
        double inv = 1.0 / static_cast<double>(batch.size());
        stats.loss *= inv;
        stats.mse *= inv;
        stats.recon *= inv;
        for (auto& p : opt.params) {
            if (!p->has_grad) continue;
            for (S& g : p->grad.data) g = static_cast<S>(static_cast<double>(g) * inv);
        }
        opt.clip(model.cfg.clip_norm);
        stats.lr = one_cycle_lr(step, total_steps, model.cfg.lr_max);
        opt.step(stats.lr);
        ++step;
        return stats;
    }

    // full loop: seeded shuffle per epoch, line-delimited JSON log records
    std::vector<StepStats<S>> train(const std::vector<SequenceWindow>& data, int64_t steps,
                                    std::ostream* log = nullptr,
                                    const std::filesystem::path* ckpt_dir = nullptr) {
        check(!data.empty(), "train: empty dataset");
        std::vector<StepStats<S>> trace;
        std::vector<size_t> order(data.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        size_t cursor = order.size();
        for (int64_t s = 0; s < steps; ++s) {
            std::vector<const SequenceWindow*> batch;
            for (int64_t b = 0; b < model.cfg.batch_size; ++b) {
                if (cursor >= order.size()) {
                    std::shuffle(order.begin(), order.end(), rng);
                    cursor = 0;
                }
                batch.push_back(&data[order[cursor++]]);
            }
            auto st = train_step(batch, steps);
            trace.push_back(st);
            if (log) {
                nlohmann::json rec = {{"step", step}, {"loss", st.loss}, {"mse", st.mse},
                                      {"recon", st.recon}, {"lr", st.lr}};
                (*log) << rec.dump() << "\n";
            }
            if (ckpt_dir && model.cfg.checkpoint_every > 0 &&
                (step % model.cfg.checkpoint_every == 0 || s + 1 == steps))
                save(*ckpt_dir / ("checkpoint_step" + std::to_string(step) + ".sftckpt"));
        }
        return trace;
    }

    std::vector<std::pair<std::string, Tensor<S>>> state_tensors() const {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        auto named = model.params();
        for (const auto& [name, p] : named) out.push_back({name, p->value});
        for (size_t i = 0; i < named.size(); ++i) {
            out.push_back({"opt.m." + named[i].first, opt.m[i]});
            out.push_back({"opt.v." + named[i].first, opt.v[i]});
        }
        return out;
    }

    void save(const std::filesystem::path& file) const {
        std::ostringstream rs;
        rs << rng;
        save_checkpoint<S>(file, model.cfg, step, rs.str(), state_tensors());
    }

    void load(const std::filesystem::path& file) {
        auto ck = load_checkpoint<S>(file);
        auto named = model.params();
        restore_params(ck, named);
        for (size_t i = 0; i < named.size(); ++i) {
            auto mi = ck.tensors.find("opt.m." + named[i].first);
            auto vi = ck.tensors.find("opt.v." + named[i].first);
            if (mi == ck.tensors.end() || vi == ck.tensors.end())
                throw format_error("load: checkpoint is missing optimizer state for " +
                                   named[i].first);
            opt.m[i] = mi->second;
            opt.v[i] = vi->second;
        }
        step = ck.step;
        opt.t = ck.step;
        if (!ck.rng_state.empty()) {
            std::istringstream rs(ck.rng_state);
            rs >> rng;
        }
    }
};

// ---------------------------------------------------------------------------
// gradient verification

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;
    bool pass = true;
};

// Compares analytic gradients of a scalar-valued closure against central
// finite differences. Checks up to `per_tensor` deterministically spread
// elements of each listed tensor; meant for 64-bit scalars and tiny shapes.
template <typename S, typename F>
GradCheckReport gradcheck(F make_loss, const NamedParams<S>& checked, double fd_step = 1e-5,
                          double tol = 1e-3, int per_tensor = 16) {
    for (const auto& [name, p] : checked) sft::zero_grad(p);
    auto loss = make_loss();
    check(loss->value.numel() == 1, "gradcheck: closure must return a scalar");
    backward(loss);

    GradCheckReport rep;
    for (const auto& [name, p] : checked) {
        GradCheckEntry ent{name, 0.0, true};
        Tensor<S> analytic = p->has_grad ? p->grad : Tensor<S>::zeros(p->value.shape);
        int64_t n = p->value.numel();
        int64_t stride = std::max<int64_t>(1, n / per_tensor);
        for (int64_t k = 0; k < n; k += stride) {
            S saved = p->value[k];
            p->value[k] = saved + static_cast<S>(fd_step);
            double fp = static_cast<double>(make_loss()->value[0]);
            p->value[k] = saved - static_cast<S>(fd_step);
            double fm = static_cast<double>(make_loss()->value[0]);
            p->value[k] = saved;
            double fd = (fp - fm) / (2.0 * fd_step);
            double an = static_cast<double>(analytic[k]);
            double denom = std::max({std::abs(an), std::abs(fd), 1e-6});
            double rel = std::abs(an - fd) / denom;
            ent.max_rel_err = std::max(ent.max_rel_err, rel);
        }
        ent.pass = ent.max_rel_err < tol;
        rep.max_rel_err = std::max(rep.max_rel_err, ent.max_rel_err);
        rep.pass = rep.pass && ent.pass;
        rep.entries.push_back(ent);
    }
    for (const auto& [name, p] : checked) sft::zero_grad(p);
    return rep;
}

}  // namespace sft
