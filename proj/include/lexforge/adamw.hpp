#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "lexforge/tensor.hpp"

namespace lexforge {

struct AdamWConfig {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// First and second moments per tensor, in the canonical tensors() order.
template <class S>
struct OptimizerState {
    std::int64_t step = 0;
    std::vector<Vec<S>> m;
    std::vector<Vec<S>> v;

    static OptimizerState init(const std::vector<TensorRef<S>>& refs) {
        OptimizerState state;
        state.m.reserve(refs.size());
        state.v.reserve(refs.size());
        for (const auto& t : refs) {
            state.m.push_back(Vec<S>::Zero(t.size()));
            state.v.push_back(Vec<S>::Zero(t.size()));
        }
        return state;
    }
};

// One decoupled-weight-decay Adam step with a per-tensor learning rate.
// Weight decay is skipped for tensors whose decay flag is off (biases and
// layer-norm parameters).
template <class S>
void adamw_step(std::vector<TensorRef<S>>& params, const std::vector<TensorRef<S>>& grads,
                OptimizerState<S>& state, const AdamWConfig& config,
                std::span<const double> lr_per_tensor) {
    check(params.size() == grads.size() && params.size() == state.m.size(),
          "adamw_step: parameter/gradient/state layouts disagree");
    check(lr_per_tensor.size() == params.size(), "adamw_step: lr table size mismatch");
    state.step += 1;
    const S b1 = static_cast<S>(config.beta1);
    const S b2 = static_cast<S>(config.beta2);
    const S bias1 = S(1) - static_cast<S>(std::pow(config.beta1, static_cast<double>(state.step)));
    const S bias2 = S(1) - static_cast<S>(std::pow(config.beta2, static_cast<double>(state.step)));
    const S eps = static_cast<S>(config.eps);

    for (std::size_t t = 0; t < params.size(); ++t) {
        check(params[t].size() == grads[t].size(), "adamw_step: shape mismatch at " + params[t].name);
        Eigen::Map<Vec<S>> theta(params[t].data, params[t].size());
        Eigen::Map<const Vec<S>> g(grads[t].data, grads[t].size());
        if (!g.allFinite()) fail("adamw_step: non-finite gradient for " + params[t].name);
        auto& m = state.m[t];
        auto& v = state.v[t];
        m = b1 * m + (S(1) - b1) * g;
        v = (b2 * v.array() + (S(1) - b2) * g.array().square()).matrix();
        const S lr = static_cast<S>(lr_per_tensor[t]);
        Vec<S> update =
            ((m.array() / bias1) / ((v.array() / bias2).sqrt() + eps)).matrix();
        if (params[t].decay && config.weight_decay != 0.0) {
            update += static_cast<S>(config.weight_decay) * theta;
        }
        theta -= lr * update;
    }
}

// Uniform learning rate across every tensor.
template <class S>
void adamw_step(std::vector<TensorRef<S>>& params, const std::vector<TensorRef<S>>& grads,
                OptimizerState<S>& state, const AdamWConfig& config) {
    std::vector<double> lrs(params.size(), config.lr);
    adamw_step(params, grads, state, config, lrs);
}

}  // namespace lexforge
