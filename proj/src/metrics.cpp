#include "sft/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include "sft/tensor.hpp"

namespace sft {

ConfusionCounts binarize_and_count(const float* pred, const float* truth, int64_t n, double tau) {
    ConfusionCounts c;
    for (int64_t i = 0; i < n; ++i) {
        bool p = static_cast<double>(pred[i]) >= tau;
        bool t = static_cast<double>(truth[i]) >= tau;
        if (p && t)
            ++c.tp;
        else if (p && !t)
            ++c.fp;
        else if (!p && t)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

ConfusionCounts binarize_and_count(const EchoSequence& pred, const EchoSequence& truth,
                                   int64_t frame, double tau) {
    if (pred.h != truth.h || pred.w != truth.w)
        throw std::domain_error("binarize_and_count: frame shape mismatch");
    return binarize_and_count(pred.frame(frame), truth.frame(frame), pred.h * pred.w, tau);
}

std::optional<double> csi(const ConfusionCounts& c) {
    double den = static_cast<double>(c.tp + c.fn + c.fp);
    if (den == 0.0) return std::nullopt;
    return static_cast<double>(c.tp) / den;
}

std::optional<double> gss(const ConfusionCounts& c) {
    double n = static_cast<double>(c.total());
    if (n == 0.0) return std::nullopt;
    double tp = c.tp, fp = c.fp, fn = c.fn, tn = c.tn;
    double e_tp = (tp + fp) * (tp + fn) / n;
    double e_tn = (fn + tn) * (fp + tn) / n;
    double den = tp + fn + fp + tn - e_tp - e_tn;
    if (den == 0.0) return std::nullopt;
    return ((tp - e_tp) + (tn - e_tn)) / den;
}

std::optional<double> hss(const ConfusionCounts& c) {
    double tp = c.tp, fp = c.fp, fn = c.fn, tn = c.tn;
    double den = (tp + fn) * (fn + tn) + (tp + fp) * (fp + tn);
    if (den == 0.0) return std::nullopt;
    return 2.0 * (tp * tn - fn * fp) / den;
}

std::optional<double> ets(const ConfusionCounts& c) {
    double n = static_cast<double>(c.total());
    if (n == 0.0) return std::nullopt;
    double tp = c.tp, fp = c.fp, fn = c.fn;
    double e_tp = (tp + fp) * (tp + fn) / n;
    double den = tp + fn + fp - e_tp;
    if (den == 0.0) return std::nullopt;
    return (tp - e_tp) / den;
}

static std::optional<double> mean_opt(const std::vector<std::optional<double>>& vals) {
    double s = 0.0;
    int n = 0;
    for (const auto& v : vals)
        if (v) {
            s += *v;
            ++n;
        }
    if (n == 0) return std::nullopt;
    return s / n;
}

std::optional<double> MetricReport::mean_csi(size_t ti) const {
    std::vector<std::optional<double>> v;
    for (int64_t l = 1; l <= lead_times; ++l) v.push_back(cell(ti, l).csi);
    return mean_opt(v);
}
std::optional<double> MetricReport::mean_gss(size_t ti) const {
    std::vector<std::optional<double>> v;
    for (int64_t l = 1; l <= lead_times; ++l) v.push_back(cell(ti, l).gss);
    return mean_opt(v);
}
std::optional<double> MetricReport::mean_hss(size_t ti) const {
    std::vector<std::optional<double>> v;
    for (int64_t l = 1; l <= lead_times; ++l) v.push_back(cell(ti, l).hss);
    return mean_opt(v);
}

MetricReport evaluate(const std::vector<std::pair<EchoSequence, EchoSequence>>& pairs,
                      const std::vector<double>& pixel_thresholds) {
    MetricReport rep;
    rep.thresholds = pixel_thresholds;
    if (pairs.empty()) return rep;
    rep.lead_times = pairs.front().first.t;
    for (const auto& [pred, truth] : pairs)
        check(pred.t == rep.lead_times && truth.t == rep.lead_times,
              "evaluate: inconsistent sequence lengths");
    rep.cells.resize(pixel_thresholds.size() * static_cast<size_t>(rep.lead_times));
    for (size_t ti = 0; ti < pixel_thresholds.size(); ++ti)
        for (int64_t lead = 1; lead <= rep.lead_times; ++lead) {
            MetricCell cell;
            cell.threshold = pixel_thresholds[ti];
            cell.lead = lead;
            for (const auto& [pred, truth] : pairs)
                cell.counts += binarize_and_count(pred, truth, lead - 1, pixel_thresholds[ti]);
            cell.csi = csi(cell.counts);
            cell.gss = gss(cell.counts);
            cell.hss = hss(cell.counts);
            cell.ets = ets(cell.counts);
            rep.cells[ti * static_cast<size_t>(rep.lead_times) + static_cast<size_t>(lead - 1)] =
                cell;
        }
    return rep;
}

EchoSequence persistence_baseline(const EchoSequence& input_seq, int64_t t_out) {
    check(input_seq.t >= 1, "persistence_baseline: empty input");
    EchoSequence out;
    out.t = t_out;
    out.h = input_seq.h;
    out.w = input_seq.w;
    out.interval_min = input_seq.interval_min;
    out.convention = input_seq.convention;
    out.source_id = input_seq.source_id;
    out.frames.resize(static_cast<size_t>(t_out * out.h * out.w));
    const float* last = input_seq.frame(input_seq.t - 1);
    for (int64_t t = 0; t < t_out; ++t)
        std::copy_n(last, out.h * out.w, out.frames.data() + t * out.h * out.w);
    return out;
}

double sequence_mse(const EchoSequence& a, const EchoSequence& b) {
    check(a.t == b.t && a.h == b.h && a.w == b.w, "sequence_mse: shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.frames.size(); ++i) {
        double d = static_cast<double>(a.frames[i]) - static_cast<double>(b.frames[i]);
        s += d * d;
    }
    return s / static_cast<double>(a.frames.size());
}

}  // namespace sft
