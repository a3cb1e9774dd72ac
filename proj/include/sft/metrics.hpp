#pragma once

// Forecast verification: thresholded confusion counts and the categorical
// scores, pooled (micro-averaged) over a test set per (threshold, lead time).
// Degenerate denominators yield missing values, never zeros.

#include <optional>
#include <vector>

#include "sft/data_io.hpp"

namespace sft {

struct ConfusionCounts {
    uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

    uint64_t total() const { return tp + fp + fn + tn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
};

ConfusionCounts binarize_and_count(const float* pred, const float* truth, int64_t n, double tau);
ConfusionCounts binarize_and_count(const EchoSequence& pred, const EchoSequence& truth,
                                   int64_t frame, double tau);

std::optional<double> csi(const ConfusionCounts& c);
std::optional<double> gss(const ConfusionCounts& c);  // with TN chance terms, as printed
std::optional<double> hss(const ConfusionCounts& c);
std::optional<double> ets(const ConfusionCounts& c);  // standard equitable threat score

struct MetricCell {
    double threshold = 0.0;
    int64_t lead = 0;  // 1-based frames ahead
    ConfusionCounts counts;
    std::optional<double> csi, gss, hss, ets;
};

struct MetricReport {
    std::vector<double> thresholds;
    int64_t lead_times = 0;
    std::vector<MetricCell> cells;  // thresholds x lead_times, lead-major per threshold

    const MetricCell& cell(size_t ti, int64_t lead) const {
        return cells[ti * static_cast<size_t>(lead_times) + static_cast<size_t>(lead - 1)];
    }
    // mean over lead times, missing cells excluded
    std::optional<double> mean_csi(size_t ti) const;
    std::optional<double> mean_gss(size_t ti) const;
    std::optional<double> mean_hss(size_t ti) const;
};

// pooled counts over all (pred, truth) pairs; sequences must share shape
MetricReport evaluate(const std::vector<std::pair<EchoSequence, EchoSequence>>& pairs,
                      const std::vector<double>& pixel_thresholds);

EchoSequence persistence_baseline(const EchoSequence& input_seq, int64_t t_out);

double sequence_mse(const EchoSequence& a, const EchoSequence& b);

}  // namespace sft
