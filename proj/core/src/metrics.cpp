#include "exchanger/metrics.hpp"

namespace exchanger {

ClassificationMetrics compute_classification_metrics(const Confusion& cm) {
    const int k = cm.classes;
    double sum_p = 0, sum_r = 0, sum_f1 = 0;
    for (int c = 0; c < k; ++c) {
        const double tp = static_cast<double>(cm.at(c, c));
        double fp = 0, fn = 0;
        for (int o = 0; o < k; ++o) {
            if (o == c) continue;
            fp += static_cast<double>(cm.at(o, c));
            fn += static_cast<double>(cm.at(c, o));
        }
        const double p = (tp + fp) > 0 ? tp / (tp + fp) : 0.0;
        const double r = (tp + fn) > 0 ? tp / (tp + fn) : 0.0;
        const double f1 = (p + r) > 0 ? 2.0 * p * r / (p + r) : 0.0;
        sum_p += p;
        sum_r += r;
        sum_f1 += f1;
    }
    ClassificationMetrics m;
    m.precision_pct = 100.0 * sum_p / k;
    m.recall_pct = 100.0 * sum_r / k;
    m.f1_pct = 100.0 * sum_f1 / k;
    return m;
}

double compute_miou_pct(const Confusion& cm) {
    const int k = cm.classes;
    double sum = 0;
    int present = 0;
    for (int c = 0; c < k; ++c) {
        const double tp = static_cast<double>(cm.at(c, c));
        double fp = 0, fn = 0;
        for (int o = 0; o < k; ++o) {
            if (o == c) continue;
            fp += static_cast<double>(cm.at(o, c));
            fn += static_cast<double>(cm.at(c, o));
        }
        if (tp + fp + fn == 0) continue;  // absent in both truth and prediction
        sum += tp / (tp + fp + fn);
        ++present;
    }
    return present > 0 ? 100.0 * sum / present : 0.0;
}

}  // namespace exchanger
