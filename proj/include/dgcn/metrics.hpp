#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dgcn/errors.hpp"

namespace dgcn {

// Per-class intersection over union: TP / (T + P - TP). Classes absent
// from both predictions and labels get NaN and are excluded from the
// mean.
inline std::vector<double> iou_per_class(const std::vector<int>& preds,
                                         const std::vector<int>& labels, std::size_t num_classes) {
    if (preds.size() != labels.size()) throw DimensionError("iou: pred/label count mismatch");
    std::vector<std::size_t> tp(num_classes, 0), t(num_classes, 0), p(num_classes, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        int pr = preds[i], la = labels[i];
        if (pr < 0 || static_cast<std::size_t>(pr) >= num_classes || la < 0 ||
            static_cast<std::size_t>(la) >= num_classes)
            throw std::out_of_range("iou: class id out of range");
        ++t[static_cast<std::size_t>(la)];
        ++p[static_cast<std::size_t>(pr)];
        if (pr == la) ++tp[static_cast<std::size_t>(pr)];
    }
    std::vector<double> iou(num_classes, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t c = 0; c < num_classes; ++c) {
        const std::size_t denom = t[c] + p[c] - tp[c];
        if (denom > 0) iou[c] = static_cast<double>(tp[c]) / static_cast<double>(denom);
    }
    return iou;
}

// Mean IoU over the classes that occur in predictions or ground truth.
inline double miou(const std::vector<int>& preds, const std::vector<int>& labels,
                   std::size_t num_classes) {
    std::vector<double> iou = iou_per_class(preds, labels, num_classes);
    double sum = 0;
    std::size_t n = 0;
    for (double v : iou) {
        if (!std::isnan(v)) {
            sum += v;
            ++n;
        }
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

inline double overall_accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
    if (preds.size() != labels.size()) throw DimensionError("oa: pred/label count mismatch");
    if (preds.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == labels[i]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(preds.size());
}

// Micro-averaged F1 over pooled counts: precision = TP'/P', recall =
// TP'/T', F1 = 2pr/(p+r); 0 when either pool is empty with no hits.
inline double micro_f1(const std::vector<std::uint8_t>& preds,
                       const std::vector<std::uint8_t>& targets) {
    if (preds.size() != targets.size()) throw DimensionError("micro_f1: size mismatch");
    std::size_t tp = 0, p = 0, t = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i]) ++p;
        if (targets[i]) ++t;
        if (preds[i] && targets[i]) ++tp;
    }
    if (p == 0 || t == 0) return 0.0;
    const double precision = static_cast<double>(tp) / static_cast<double>(p);
    const double recall = static_cast<double>(tp) / static_cast<double>(t);
    if (precision + recall == 0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

struct EpochTrace {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double lr = 0;
    double loss = 0;
    bool has_eval = false;
    double oa = 0;
    double miou = 0;
    double mf1 = 0;
};

struct MetricsReport {
    std::vector<double> per_class_iou;
    double miou = 0;
    double oa = 0;
    double micro_f1 = 0;
    bool multilabel = false;
    std::vector<EpochTrace> trace;
    bool diverged = false;
    std::size_t best_epoch = 0;
    double best_metric = 0;
};

// CSV: step,epoch,lr,loss,oa,miou,mf1 with '-' for inapplicable fields.
std::string trace_to_csv(const MetricsReport& report);

}  // namespace dgcn
