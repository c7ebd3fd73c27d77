#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include <nlohmann/json.hpp>

#include "bhgcn/tensor.hpp"

namespace bhgcn::metrics {

/// Binary classification metrics in percent; class 1 (patient) is the positive class.
struct FoldMetrics {
    double acc = 0, sen = 0, spe = 0, auc = 0;
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
};

/// Mann-Whitney AUC: fraction of (positive, negative) pairs ranked correctly, ties count 1/2.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    double favourable = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) favourable += 1.0;
            else if (scores[i] == scores[j]) favourable += 0.5;
        }
    }
    if (pairs == 0) throw Error("AUC undefined: labels contain a single class");
    return 100.0 * favourable / static_cast<double>(pairs);
}

/// Threshold 0.5 on the positive-class probability for ACC/SEN/SPE.
inline FoldMetrics compute_metrics(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ShapeError("compute_metrics: scores and labels differ in length");
    FoldMetrics m;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= 0.5;
        if (labels[i] == 1) (pred ? m.tp : m.fn)++;
        else (pred ? m.fp : m.tn)++;
    }
    m.auc = auc(scores, labels);
    const double n = static_cast<double>(scores.size());
    m.acc = 100.0 * static_cast<double>(m.tp + m.tn) / n;
    m.sen = m.tp + m.fn ? 100.0 * static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn) : 0.0;
    m.spe = m.tn + m.fp ? 100.0 * static_cast<double>(m.tn) / static_cast<double>(m.tn + m.fp) : 0.0;
    return m;
}

struct Summary {
    double mean = 0, std = 0;
};

/// Mean and sample standard deviation.
inline Summary summarize(const std::vector<double>& xs) {
    Summary s;
    if (xs.empty()) return s;
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0;
        for (double x : xs) ss += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return s;
}

struct MetricsReport {
    std::vector<FoldMetrics> folds;
    Summary acc, sen, spe, auc;

    void finalize() {
        std::vector<double> a, se, sp, au;
        for (const auto& f : folds) {
            a.push_back(f.acc);
            se.push_back(f.sen);
            sp.push_back(f.spe);
            au.push_back(f.auc);
        }
        acc = summarize(a);
        sen = summarize(se);
        spe = summarize(sp);
        auc = summarize(au);
    }
};

inline nlohmann::json to_json(const FoldMetrics& f) {
    return {{"acc", f.acc}, {"sen", f.sen}, {"spe", f.spe}, {"auc", f.auc},
            {"confusion", {{"tp", f.tp}, {"tn", f.tn}, {"fp", f.fp}, {"fn", f.fn}}}};
}

inline nlohmann::json to_json(const MetricsReport& r) {
    auto s = [](const Summary& x) { return nlohmann::json{{"mean", x.mean}, {"std", x.std}}; };
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : r.folds) folds.push_back(to_json(f));
    return {{"acc", s(r.acc)}, {"sen", s(r.sen)}, {"spe", s(r.spe)}, {"auc", s(r.auc)}, {"folds", folds}};
}

}  // namespace bhgcn::metrics
