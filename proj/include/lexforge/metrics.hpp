#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "lexforge/error.hpp"

namespace lexforge {

struct PRF {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Per-label precision/recall/F1 plus their unweighted (macro) means over the
// full label set, unpredicted labels included. The 0/0 convention is 0.
struct MetricsReport {
    std::vector<PRF> per_label;
    PRF macro;

    nlohmann::json to_json() const {
        nlohmann::json per;
        for (std::size_t l = 0; l < per_label.size(); ++l) {
            per[std::to_string(l)] = {{"precision", per_label[l].precision},
                                      {"recall", per_label[l].recall},
                                      {"f1", per_label[l].f1}};
        }
        return {{"per_label", per},
                {"macro",
                 {{"precision", macro.precision}, {"recall", macro.recall}, {"f1", macro.f1}}}};
    }
};

struct LabelCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
};

inline MetricsReport report_from_counts(const std::vector<LabelCounts>& counts) {
    MetricsReport report;
    report.per_label.resize(counts.size());
    auto ratio = [](std::int64_t num, std::int64_t den) {
        return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    for (std::size_t l = 0; l < counts.size(); ++l) {
        PRF& prf = report.per_label[l];
        prf.precision = ratio(counts[l].tp, counts[l].tp + counts[l].fp);
        prf.recall = ratio(counts[l].tp, counts[l].tp + counts[l].fn);
        prf.f1 = prf.precision + prf.recall == 0.0
                     ? 0.0
                     : 2.0 * prf.precision * prf.recall / (prf.precision + prf.recall);
        report.macro.precision += prf.precision;
        report.macro.recall += prf.recall;
        report.macro.f1 += prf.f1;
    }
    const double n = static_cast<double>(counts.size());
    if (!counts.empty()) {
        report.macro.precision /= n;
        report.macro.recall /= n;
        report.macro.f1 /= n;
    }
    return report;
}

// Multi-label classification: one label-set per example.
inline MetricsReport multilabel_metrics(const std::vector<std::vector<std::uint8_t>>& gold,
                                        const std::vector<std::vector<std::uint8_t>>& predicted,
                                        int label_count) {
    check(gold.size() == predicted.size(), "metrics: gold/predicted length mismatch");
    std::vector<LabelCounts> counts(static_cast<std::size_t>(label_count));
    for (std::size_t i = 0; i < gold.size(); ++i) {
        check(gold[i].size() == static_cast<std::size_t>(label_count) &&
                  predicted[i].size() == static_cast<std::size_t>(label_count),
              "metrics: label vector width mismatch");
        for (int l = 0; l < label_count; ++l) {
            const bool g = gold[i][static_cast<std::size_t>(l)] != 0;
            const bool p = predicted[i][static_cast<std::size_t>(l)] != 0;
            if (g && p) ++counts[static_cast<std::size_t>(l)].tp;
            else if (!g && p) ++counts[static_cast<std::size_t>(l)].fp;
            else if (g && !p) ++counts[static_cast<std::size_t>(l)].fn;
        }
    }
    return report_from_counts(counts);
}

// Single-label classification over a flat sequence of decisions (used both
// for per-sentence role labelling and for binary judgment prediction).
inline MetricsReport classification_metrics(const std::vector<int>& gold,
                                            const std::vector<int>& predicted, int label_count) {
    check(gold.size() == predicted.size(), "metrics: gold/predicted length mismatch");
    std::vector<LabelCounts> counts(static_cast<std::size_t>(label_count));
    for (std::size_t i = 0; i < gold.size(); ++i) {
        const int g = gold[i], p = predicted[i];
        check(g >= 0 && g < label_count && p >= 0 && p < label_count,
              "metrics: label out of range");
        if (g == p) {
            ++counts[static_cast<std::size_t>(g)].tp;
        } else {
            ++counts[static_cast<std::size_t>(p)].fp;
            ++counts[static_cast<std::size_t>(g)].fn;
        }
    }
    return report_from_counts(counts);
}

inline double accuracy(const std::vector<int>& gold, const std::vector<int>& predicted) {
    check(gold.size() == predicted.size() && !gold.empty(), "accuracy: length mismatch");
    std::int64_t hits = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) hits += gold[i] == predicted[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(gold.size());
}

}  // namespace lexforge
