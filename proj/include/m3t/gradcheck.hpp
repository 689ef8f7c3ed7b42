#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "m3t/tensor.hpp"

namespace m3t {

// Central-difference check of the autograd gradient of f() w.r.t. x.
// f must rebuild the forward pass on every call (it sees x's perturbed
// storage). Relative error uses an absolute floor of 1e-8 so near-zero
// gradients do not blow up the ratio. Returns the max over elements.
template <class S>
double finite_diff_check(const std::function<Tensor<S>()>& f, Tensor<S> x, double step) {
    if (step <= 0.0) throw ContractError("finite_diff_check: step must be positive");
    std::vector<S> autograd;
    x.zero_grad();  // stale gradient from an earlier check would accumulate
    {
        Tape<S> tape;
        Tensor<S> loss = f();
        if (loss.numel() != 1) throw ContractError("finite_diff_check: f must be scalar-valued");
        tape.backward(loss);
        if (!x.has_grad()) throw ContractError("finite_diff_check: x received no gradient");
        autograd = x.grad();
        x.zero_grad();
    }
    double worst = 0.0;
    S* data = x.data();
    for (idx i = 0; i < x.numel(); ++i) {
        const S keep = data[i];
        data[i] = keep + static_cast<S>(step);
        const double fp = static_cast<double>(f().item());
        data[i] = keep - static_cast<S>(step);
        const double fm = static_cast<double>(f().item());
        data[i] = keep;
        const double fd = (fp - fm) / (2.0 * step);
        const double ad = static_cast<double>(autograd[static_cast<size_t>(i)]);
        const double denom = std::max({std::abs(fd), std::abs(ad), 1e-8});
        worst = std::max(worst, std::abs(fd - ad) / denom);
    }
    return worst;
}

// Same check across a list of parameters, one backward pass total.
template <class S>
double finite_diff_check_params(const std::function<Tensor<S>()>& f,
                                const std::vector<Tensor<S>>& params, double step) {
    if (step <= 0.0) throw ContractError("finite_diff_check: step must be positive");
    std::vector<std::vector<S>> grads;
    for (auto p : params) p.zero_grad();
    {
        Tape<S> tape;
        Tensor<S> loss = f();
        if (loss.numel() != 1) throw ContractError("finite_diff_check: f must be scalar-valued");
        tape.backward(loss);
        for (auto p : params) {
            if (!p.has_grad())
                throw ContractError("finite_diff_check: a parameter received no gradient");
            grads.push_back(p.grad());
            p.zero_grad();
        }
    }
    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<S> p = params[pi];
        S* data = p.data();
        for (idx i = 0; i < p.numel(); ++i) {
            const S keep = data[i];
            data[i] = keep + static_cast<S>(step);
            const double fp = static_cast<double>(f().item());
            data[i] = keep - static_cast<S>(step);
            const double fm = static_cast<double>(f().item());
            data[i] = keep;
            const double fd = (fp - fm) / (2.0 * step);
            const double ad = static_cast<double>(grads[pi][static_cast<size_t>(i)]);
            const double denom = std::max({std::abs(fd), std::abs(ad), 1e-8});
            worst = std::max(worst, std::abs(fd - ad) / denom);
        }
    }
    return worst;
}

}  // namespace m3t
