#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "lexforge/error.hpp"

namespace lexforge {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Additive score for keys that must receive zero attention. exp(-1e9)
// underflows to exactly 0 in both f32 and f64, which keeps fully-padded
// batches free of inf - inf.
constexpr double kMaskedScore = -1e9;

template <class S>
inline S gelu(S x) {
    return S(0.5) * x * (S(1) + std::erf(x * S(0.70710678118654752440)));
}

template <class S>
inline S gelu_grad(S x) {
    const S cdf = S(0.5) * (S(1) + std::erf(x * S(0.70710678118654752440)));
    const S pdf = std::exp(S(-0.5) * x * x) * S(0.39894228040143267794);  // 1/sqrt(2*pi)
    return cdf + x * pdf;
}

// In-place softmax over each row, with max subtraction.
template <class S>
inline void softmax_rows(Mat<S>& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        const S peak = row.maxCoeff();
        row = (row.array() - peak).exp().matrix();
        row /= row.sum();
    }
}

template <class S>
inline S log_sum_exp(const Vec<S>& v) {
    const S peak = v.maxCoeff();
    return peak + std::log((v.array() - peak).exp().sum());
}

template <class S>
inline bool all_finite(const Mat<S>& m) {
    return m.allFinite();
}

// A uniform view over every learnable tensor: name, flat storage, shape, and
// whether weight decay applies. The ordering produced by a parameter
// struct's tensors() is the canonical one used by the optimizer, the
// checkpoint format, and the gradient checks.
template <class S>
struct TensorRef {
    std::string name;
    S* data = nullptr;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    bool decay = false;

    Eigen::Index size() const { return rows * cols; }
};

template <class S>
inline TensorRef<S> ref(const std::string& name, Mat<S>& m, bool decay) {
    return {name, m.data(), m.rows(), m.cols(), decay};
}

template <class S>
inline TensorRef<S> ref(const std::string& name, Vec<S>& v, bool decay) {
    return {name, v.data(), v.rows(), 1, decay};
}

// Runs fn(i) for i in [0, n). Work is split into contiguous blocks, one per
// worker; results must not depend on the split, so fn may only touch state
// owned by item i.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t used = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
    std::vector<std::thread> pool;
    pool.reserve(used);
    const std::size_t per = (n + used - 1) / used;
    for (std::size_t w = 0; w < used; ++w) {
        const std::size_t begin = w * per;
        const std::size_t end = std::min(n, begin + per);
        if (begin >= end) break;
        pool.emplace_back([&, begin, end] {
            for (std::size_t i = begin; i < end; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace lexforge
