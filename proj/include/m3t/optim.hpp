#pragma once

#include <cmath>
#include <vector>

#include "m3t/tensor.hpp"

namespace m3t {

// Adam with bias correction. Moment buffers are kept parallel to the
// ParamSet registration order; adam_step zeroes gradients after applying
// the update.
template <class S>
struct AdamState {
    double lr = 0.004;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    idx step = 0;
    std::vector<std::vector<S>> m;
    std::vector<std::vector<S>> v;

    AdamState() = default;
    AdamState(double lr_, double b1, double b2, double eps_)
        : lr(lr_), beta1(b1), beta2(b2), eps(eps_) {}

    void init(const ParamSet<S>& params) {
        m.clear();
        v.clear();
        for (const auto& [name, t] : params.items) {
            m.emplace_back(static_cast<size_t>(t.numel()), S(0));
            v.emplace_back(static_cast<size_t>(t.numel()), S(0));
        }
        step = 0;
    }
};

template <class S>
void adam_step(ParamSet<S>& params, AdamState<S>& state) {
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw ContractError("adam_step: state not initialized for this parameter set");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (size_t p = 0; p < params.items.size(); ++p) {
        auto& [name, t] = params.items[p];
        if (!t.has_grad())
            throw ContractError("adam_step: missing gradient on trainable parameter " + name);
        auto& mv = state.m[p];
        auto& vv = state.v[p];
        S* w = t.data();
        S* g = t.grad().data();
        const size_t n = static_cast<size_t>(t.numel());
        for (size_t i = 0; i < n; ++i) {
            const double gi = static_cast<double>(g[i]);
            mv[i] = static_cast<S>(state.beta1 * mv[i] + (1.0 - state.beta1) * gi);
            vv[i] = static_cast<S>(state.beta2 * vv[i] + (1.0 - state.beta2) * gi * gi);
            const double mhat = mv[i] / bc1;
            const double vhat = vv[i] / bc2;
            w[i] = static_cast<S>(w[i] - state.lr * mhat / (std::sqrt(vhat) + state.eps));
        }
        std::fill(g, g + n, S(0));
    }
}

}  // namespace m3t
