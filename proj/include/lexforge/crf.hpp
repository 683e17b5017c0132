#pragma once

#include <string>
#include <vector>

#include "lexforge/tensor.hpp"

namespace lexforge {

// Linear-chain CRF scores: trans(a, b) is the score of moving from label a
// to label b; start/end score the first and last labels of a path.
template <class S>
struct CrfParams {
    Mat<S> trans;
    Vec<S> start;
    Vec<S> end;

    static CrfParams zeros(int labels) {
        CrfParams p;
        p.trans = Mat<S>::Zero(labels, labels);
        p.start = Vec<S>::Zero(labels);
        p.end = Vec<S>::Zero(labels);
        return p;
    }

    int labels() const { return static_cast<int>(p_labels()); }

    std::vector<TensorRef<S>> tensors(const std::string& prefix) {
        return {ref(prefix + "trans", trans, true), ref(prefix + "start", start, false),
                ref(prefix + "end", end, false)};
    }

private:
    Eigen::Index p_labels() const { return start.size(); }
};

template <class S>
S crf_path_score(const Mat<S>& emissions, const std::vector<int>& path, const CrfParams<S>& crf) {
    const Eigen::Index n = emissions.rows();
    S score = crf.start[path[0]] + emissions(0, path[0]);
    for (Eigen::Index t = 1; t < n; ++t) {
        score += crf.trans(path[static_cast<std::size_t>(t - 1)], path[static_cast<std::size_t>(t)]) +
                 emissions(t, path[static_cast<std::size_t>(t)]);
    }
    score += crf.end[path[static_cast<std::size_t>(n - 1)]];
    return score;
}

// log Z by the forward algorithm, entirely in log space.
template <class S>
S crf_log_partition(const Mat<S>& emissions, const CrfParams<S>& crf) {
    const Eigen::Index n = emissions.rows();
    const Eigen::Index k = emissions.cols();
    check(n >= 1, "crf: empty emission sequence");
    Vec<S> alpha = crf.start + emissions.row(0).transpose();
    for (Eigen::Index t = 1; t < n; ++t) {
        Vec<S> next(k);
        for (Eigen::Index j = 0; j < k; ++j) {
            Vec<S> terms = alpha + crf.trans.col(j);
            next[j] = log_sum_exp(terms) + emissions(t, j);
        }
        alpha = next;
    }
    Vec<S> final_terms = alpha + crf.end;
    return log_sum_exp(final_terms);
}

template <class S>
struct CrfLossResult {
    S loss = 0;            // log Z - score(gold)
    Mat<S> d_emissions;    // marginals minus gold indicators
    Mat<S> d_trans;
    Vec<S> d_start, d_end;
};

// Negative log likelihood with exact gradients from forward-backward
// marginals.
template <class S>
CrfLossResult<S> crf_nll(const Mat<S>& emissions, const std::vector<int>& gold,
                         const CrfParams<S>& crf) {
    const Eigen::Index n = emissions.rows();
    const Eigen::Index k = emissions.cols();
    check(static_cast<Eigen::Index>(gold.size()) == n,
          "crf_nll: gold length " + std::to_string(gold.size()) + " does not match " +
              std::to_string(n) + " segments");
    for (int label : gold) check(label >= 0 && label < k, "crf_nll: gold label out of range");

    // forward and backward log messages
    Mat<S> alpha(n, k), beta(n, k);
    alpha.row(0) = (crf.start + emissions.row(0).transpose()).transpose();
    for (Eigen::Index t = 1; t < n; ++t) {
        for (Eigen::Index j = 0; j < k; ++j) {
            Vec<S> terms = alpha.row(t - 1).transpose() + crf.trans.col(j);
            alpha(t, j) = log_sum_exp(terms) + emissions(t, j);
        }
    }
    beta.row(n - 1) = crf.end.transpose();
    for (Eigen::Index t = n - 2; t >= 0; --t) {
        for (Eigen::Index j = 0; j < k; ++j) {
            Vec<S> terms =
                crf.trans.row(j).transpose() + emissions.row(t + 1).transpose() +
                beta.row(t + 1).transpose();
            beta(t, j) = log_sum_exp(terms);
        }
    }
    Vec<S> final_terms = alpha.row(n - 1).transpose() + crf.end;
    const S log_z = log_sum_exp(final_terms);

    CrfLossResult<S> result;
    result.loss = log_z - crf_path_score(emissions, gold, crf);
    result.d_emissions = Mat<S>::Zero(n, k);
    result.d_trans = Mat<S>::Zero(k, k);
    result.d_start = Vec<S>::Zero(k);
    result.d_end = Vec<S>::Zero(k);

    for (Eigen::Index t = 0; t < n; ++t) {
        for (Eigen::Index j = 0; j < k; ++j) {
            result.d_emissions(t, j) = std::exp(alpha(t, j) + beta(t, j) - log_z);
        }
        result.d_emissions(t, gold[static_cast<std::size_t>(t)]) -= S(1);
    }
    for (Eigen::Index j = 0; j < k; ++j) {
        result.d_start[j] = std::exp(alpha(0, j) + beta(0, j) - log_z);
        result.d_end[j] = std::exp(alpha(n - 1, j) + beta(n - 1, j) - log_z);
    }
    result.d_start[gold[0]] -= S(1);
    result.d_end[gold[static_cast<std::size_t>(n - 1)]] -= S(1);
    for (Eigen::Index t = 0; t + 1 < n; ++t) {
        for (Eigen::Index a = 0; a < k; ++a) {
            for (Eigen::Index b = 0; b < k; ++b) {
                result.d_trans(a, b) += std::exp(alpha(t, a) + crf.trans(a, b) +
                                                 emissions(t + 1, b) + beta(t + 1, b) - log_z);
            }
        }
        result.d_trans(gold[static_cast<std::size_t>(t)], gold[static_cast<std::size_t>(t + 1)]) -=
            S(1);
    }
    return result;
}

// Viterbi decoding; ties break toward the lower label id.
template <class S>
std::vector<int> crf_decode(const Mat<S>& emissions, const CrfParams<S>& crf) {
    const Eigen::Index n = emissions.rows();
    const Eigen::Index k = emissions.cols();
    check(n >= 1, "crf_decode: empty emission sequence");

    Mat<S> score(n, k);
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> back(n, k);
    score.row(0) = (crf.start + emissions.row(0).transpose()).transpose();
    for (Eigen::Index t = 1; t < n; ++t) {
        for (Eigen::Index j = 0; j < k; ++j) {
            int best_prev = 0;
            S best = score(t - 1, 0) + crf.trans(0, j);
            for (Eigen::Index a = 1; a < k; ++a) {
                const S candidate = score(t - 1, a) + crf.trans(a, j);
                if (candidate > best) {  // strict: earlier (lower) id wins ties
                    best = candidate;
                    best_prev = static_cast<int>(a);
                }
            }
            score(t, j) = best + emissions(t, j);
            back(t, j) = best_prev;
        }
    }
    int best_label = 0;
    S best_final = score(n - 1, 0) + crf.end[0];
    for (Eigen::Index j = 1; j < k; ++j) {
        const S candidate = score(n - 1, j) + crf.end[j];
        if (candidate > best_final) {
            best_final = candidate;
            best_label = static_cast<int>(j);
        }
    }
    std::vector<int> path(static_cast<std::size_t>(n));
    path[static_cast<std::size_t>(n - 1)] = best_label;
    for (Eigen::Index t = n - 1; t >= 1; --t) {
        path[static_cast<std::size_t>(t - 1)] = back(t, path[static_cast<std::size_t>(t)]);
    }
    return path;
}

}  // namespace lexforge
