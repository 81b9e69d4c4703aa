#pragma once

#include <cstdint>
#include <vector>

namespace exchanger {

// Row-major K x K confusion counts, rows = truth, columns = prediction.
struct Confusion {
    int classes = 0;
    std::vector<std::int64_t> counts;

    explicit Confusion(int k) : classes(k), counts(static_cast<std::size_t>(k) * k, 0) {}

    void add(int truth, int pred, std::int64_t n = 1) {
        counts[static_cast<std::size_t>(truth) * classes + pred] += n;
    }
    std::int64_t at(int truth, int pred) const {
        return counts[static_cast<std::size_t>(truth) * classes + pred];
    }
};

struct ClassificationMetrics {
    double precision_pct = 0;  // macro, percent
    double recall_pct = 0;
    double f1_pct = 0;
};

// Macro averages over all classes with the zero convention for classes
// that have no positives (empty denominator contributes 0).
ClassificationMetrics compute_classification_metrics(const Confusion& cm);

// Mean IoU in percent over classes present in truth or prediction;
// classes absent from both are excluded from the mean.
double compute_miou_pct(const Confusion& cm);

}  // namespace exchanger
