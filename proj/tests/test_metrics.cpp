#include <doctest.h>

#include <cmath>
#include <random>

#include "sft/metrics.hpp"

using namespace sft;

namespace {

// brute-force oracles written independently of src/metrics.cpp
double oracle_csi(double tp, double fp, double fn) { return tp / (tp + fn + fp); }

double oracle_gss(double tp, double fp, double fn, double tn) {
    double n = tp + fp + fn + tn;
    double etp = (tp + fp) * (tp + fn) / n;
    double etn = (fn + tn) * (fp + tn) / n;
    return (tp - etp + tn - etn) / (tp + fp + fn + tn - etp - etn);
}

double oracle_hss(double tp, double fp, double fn, double tn) {
    return 2.0 * (tp * tn - fn * fp) / ((tp + fn) * (fn + tn) + (tp + fp) * (fp + tn));
}

double oracle_ets(double tp, double fp, double fn, double tn) {
    double n = tp + fp + fn + tn;
    double etp = (tp + fp) * (tp + fn) / n;
    return (tp - etp) / (tp + fp + fn - etp);
}

}  // namespace

TEST_CASE("scores match brute-force oracles on 1000 random quadruples") {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<uint64_t> d(0, 5000);
    int checked = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        ConfusionCounts c{d(rng), d(rng), d(rng), d(rng)};
        double tp = c.tp, fp = c.fp, fn = c.fn, tn = c.tn;
        if (auto v = csi(c)) {
            CHECK(*v == doctest::Approx(oracle_csi(tp, fp, fn)).epsilon(1e-12));
            ++checked;
        }
        if (auto v = gss(c)) CHECK(*v == doctest::Approx(oracle_gss(tp, fp, fn, tn)).epsilon(1e-12));
        if (auto v = hss(c)) CHECK(*v == doctest::Approx(oracle_hss(tp, fp, fn, tn)).epsilon(1e-12));
        if (auto v = ets(c)) CHECK(*v == doctest::Approx(oracle_ets(tp, fp, fn, tn)).epsilon(1e-12));
    }
    CHECK(checked > 900);
}

TEST_CASE("hand-computed contingency table") {
    ConfusionCounts c{3, 1, 2, 4};
    CHECK(*csi(c) == doctest::Approx(0.5).epsilon(1e-15));
    // e_tp = 4*5/10 = 2, e_tn = 6*5/10 = 3 -> ((3-2)+(4-3))/(10-2-3) = 0.4
    CHECK(*gss(c) == doctest::Approx(0.4).epsilon(1e-15));
    // 2*(12-2)/((5*6)+(4*5)) = 20/50 = 0.4
    CHECK(*hss(c) == doctest::Approx(0.4).epsilon(1e-15));
}

TEST_CASE("perfect forecast with both classes present scores 1 everywhere") {
    ConfusionCounts c{10, 0, 0, 20};
    CHECK(*csi(c) == doctest::Approx(1.0));
    CHECK(*gss(c) == doctest::Approx(1.0));
    CHECK(*hss(c) == doctest::Approx(1.0));
    CHECK(*ets(c) == doctest::Approx(1.0));
}

TEST_CASE("CSI is invariant to true negatives") {
    ConfusionCounts a{5, 3, 2, 0};
    ConfusionCounts b{5, 3, 2, 1000000};
    CHECK(*csi(a) == *csi(b));
}

TEST_CASE("degenerate tables report missing, never zero") {
    ConfusionCounts only_tn{0, 0, 0, 100};
    CHECK(!csi(only_tn).has_value());
    CHECK(!hss(only_tn).has_value());
    CHECK(!gss(only_tn).has_value());
    ConfusionCounts empty{};
    CHECK(!csi(empty).has_value());
    CHECK(!gss(empty).has_value());
    CHECK(!ets(empty).has_value());
}

TEST_CASE("random forecasts have near-zero chance-corrected skill") {
    std::mt19937_64 rng(11);
    std::bernoulli_distribution event(0.3), forecast(0.3);
    ConfusionCounts c;
    for (int i = 0; i < 2000000; ++i) {
        bool p = forecast(rng), t = event(rng);
        if (p && t) ++c.tp;
        else if (p) ++c.fp;
        else if (t) ++c.fn;
        else ++c.tn;
    }
    CHECK(std::abs(*gss(c)) < 0.01);
    CHECK(std::abs(*hss(c)) < 0.01);
    CHECK(std::abs(*ets(c)) < 0.01);
}

TEST_CASE("binarize_and_count matches a per-pixel loop exactly") {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<float> u(0.f, 1.f);
    for (int trial = 0; trial < 100; ++trial) {
        int64_t n = 64;
        std::vector<float> pred(n), truth(n);
        for (auto& v : pred) v = u(rng);
        for (auto& v : truth) v = u(rng);
        double tau = u(rng);
        auto c = binarize_and_count(pred.data(), truth.data(), n, tau);
        uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
        for (int64_t i = 0; i < n; ++i) {
            bool p = pred[i] >= tau, t = truth[i] >= tau;
            tp += p && t;
            fp += p && !t;
            fn += !p && t;
            tn += !p && !t;
        }
        CHECK(c.tp == tp);
        CHECK(c.fp == fp);
        CHECK(c.fn == fn);
        CHECK(c.tn == tn);
        CHECK(c.total() == static_cast<uint64_t>(n));
    }
}

TEST_CASE("evaluate pools counts over sequences before scoring") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<float> u(0.f, 1.f);
    auto mk = [&](int64_t t) {
        EchoSequence s;
        s.t = t;
        s.h = 4;
        s.w = 4;
        s.frames.resize(static_cast<size_t>(t * 16));
        for (auto& v : s.frames) v = u(rng);
        return s;
    };
    std::vector<std::pair<EchoSequence, EchoSequence>> pairs;
    for (int i = 0; i < 5; ++i) pairs.push_back({mk(3), mk(3)});
    double tau = 0.4;
    auto rep = evaluate(pairs, {tau});
    REQUIRE(rep.lead_times == 3);
    for (int64_t lead = 1; lead <= 3; ++lead) {
        ConfusionCounts pooled;
        for (const auto& [p, t] : pairs) pooled += binarize_and_count(p, t, lead - 1, tau);
        const auto& cell = rep.cell(0, lead);
        CHECK(cell.counts.tp == pooled.tp);
        CHECK(cell.counts.fp == pooled.fp);
        CHECK(cell.counts.fn == pooled.fn);
        CHECK(cell.counts.tn == pooled.tn);
        if (auto v = csi(pooled)) CHECK(*cell.csi == doctest::Approx(*v).epsilon(1e-15));
    }
    // mean over leads equals the arithmetic mean of present cells
    double s = 0;
    int n = 0;
    for (int64_t lead = 1; lead <= 3; ++lead)
        if (rep.cell(0, lead).csi) {
            s += *rep.cell(0, lead).csi;
            ++n;
        }
    if (n) CHECK(*rep.mean_csi(0) == doctest::Approx(s / n).epsilon(1e-15));
}

TEST_CASE("persistence repeats the last input frame") {
    std::mt19937_64 rng(19);
    std::uniform_real_distribution<float> u(0.f, 1.f);
    EchoSequence in;
    in.t = 4;
    in.h = in.w = 3;
    in.frames.resize(static_cast<size_t>(4 * 9));
    for (auto& v : in.frames) v = u(rng);
    auto out = persistence_baseline(in, 6);
    REQUIRE(out.t == 6);
    for (int64_t t = 0; t < 6; ++t)
        for (int64_t i = 0; i < 9; ++i) CHECK(out.frame(t)[i] == in.frame(3)[i]);

    // static truth -> zero error
    EchoSequence truth = out;
    CHECK(sequence_mse(out, truth) == doctest::Approx(0.0));
}
