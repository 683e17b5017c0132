#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "lexforge/error.hpp"

namespace lexforge {

enum class WilcoxonTail { two_sided, greater };

struct WilcoxonResult {
    double statistic = 0.0;  // W = min(W+, W-)
    double p_value = 0.0;
    double w_plus = 0.0;
    double w_minus = 0.0;
    int n = 0;        // pairs remaining after zero differences are dropped
    bool exact = false;
};

namespace wilcoxon_detail {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace wilcoxon_detail

// Paired signed-rank test. Zero differences are dropped; absolute differences
// are ranked with average ranks for ties. For n <= 12 the p-value is exact by
// enumerating all 2^n sign assignments; beyond that a normal approximation
// with tie correction and continuity correction is used. `greater` tests the
// one-sided alternative that a exceeds b.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                           WilcoxonTail tail = WilcoxonTail::two_sided) {
    check(a.size() == b.size(), "wilcoxon: paired samples must have equal length");
    std::vector<double> diffs;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        if (d != 0.0) diffs.push_back(d);
    }
    check(!diffs.empty(), "wilcoxon: all differences are zero; the test is undefined");
    check(diffs.size() >= 5, "wilcoxon: need at least 5 nonzero differences, have " +
                                 std::to_string(diffs.size()));

    const int n = static_cast<int>(diffs.size());
    std::vector<std::size_t> order(diffs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return std::abs(diffs[x]) < std::abs(diffs[y]);
    });

    // average ranks over ties; twice the rank is always an integer
    std::vector<std::int64_t> rank2(diffs.size(), 0);
    std::vector<std::int64_t> tie_sizes;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() &&
               std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]])) {
            ++j;
        }
        // positions i..j share the average of ranks (i+1)..(j+1)
        const std::int64_t avg2 = static_cast<std::int64_t>(i + 1 + j + 1);
        for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = avg2;
        tie_sizes.push_back(static_cast<std::int64_t>(j - i + 1));
        i = j + 1;
    }

    WilcoxonResult result;
    result.n = n;
    std::int64_t w_plus2 = 0, total2 = 0;
    for (std::size_t k = 0; k < diffs.size(); ++k) {
        total2 += rank2[k];
        if (diffs[k] > 0) w_plus2 += rank2[k];
    }
    result.w_plus = static_cast<double>(w_plus2) / 2.0;
    result.w_minus = static_cast<double>(total2 - w_plus2) / 2.0;
    result.statistic = std::min(result.w_plus, result.w_minus);

    if (n <= 12) {
        result.exact = true;
        const std::int64_t w_min2 = std::min(w_plus2, total2 - w_plus2);
        std::int64_t at_or_below = 0, at_or_above_mirror = 0, at_or_above_wplus = 0;
        const std::uint64_t assignments = 1ULL << n;
        for (std::uint64_t mask = 0; mask < assignments; ++mask) {
            std::int64_t t2 = 0;
            for (int bit = 0; bit < n; ++bit) {
                if (mask & (1ULL << bit)) t2 += rank2[static_cast<std::size_t>(bit)];
            }
            if (t2 <= w_min2) ++at_or_below;
            if (t2 >= total2 - w_min2) ++at_or_above_mirror;
            if (t2 >= w_plus2) ++at_or_above_wplus;
        }
        const double denom = static_cast<double>(assignments);
        if (tail == WilcoxonTail::two_sided) {
            // union of both tails; they only overlap when W = S/2
            std::int64_t both = 0;
            if (w_min2 >= total2 - w_min2) {
                for (std::uint64_t mask = 0; mask < assignments; ++mask) {
                    std::int64_t t2 = 0;
                    for (int bit = 0; bit < n; ++bit) {
                        if (mask & (1ULL << bit)) t2 += rank2[static_cast<std::size_t>(bit)];
                    }
                    if (t2 <= w_min2 && t2 >= total2 - w_min2) ++both;
                }
            }
            result.p_value =
                static_cast<double>(at_or_below + at_or_above_mirror - both) / denom;
        } else {
            result.p_value = static_cast<double>(at_or_above_wplus) / denom;
        }
    } else {
        const double nd = static_cast<double>(n);
        const double mean = nd * (nd + 1.0) / 4.0;
        double variance = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0;
        for (std::int64_t t : tie_sizes) {
            const double td = static_cast<double>(t);
            variance -= (td * td * td - td) / 48.0;
        }
        const double sigma = std::sqrt(variance);
        if (tail == WilcoxonTail::two_sided) {
            const double z = (result.statistic - mean + 0.5) / sigma;
            result.p_value = std::min(1.0, 2.0 * wilcoxon_detail::normal_cdf(z));
        } else {
            const double z = (result.w_plus - mean - 0.5) / sigma;
            result.p_value = 1.0 - wilcoxon_detail::normal_cdf(z);
        }
    }
    return result;
}

}  // namespace lexforge
