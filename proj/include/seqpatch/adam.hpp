#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqpatch/tensor.hpp"

namespace seqpatch {

struct AdamOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.95;
    double beta2 = 0.99;
    double epsilon = 1e-8;
    double weight_decay = 1e-4;
};

/// Optimizer state: moment buffers are created lazily, one per parameter, in call order.
template <typename T>
struct AdamState {
    AdamOptions options;
    std::size_t step = 0;
    std::vector<std::vector<T>> first_moment;
    std::vector<std::vector<T>> second_moment;

    explicit AdamState(AdamOptions opts = {}) : options(opts)
    {
        if (!(options.beta1 > 0.0 && options.beta1 < 1.0) || !(options.beta2 > 0.0 && options.beta2 < 1.0))
            throw std::invalid_argument("Adam: beta1 and beta2 must lie in (0,1)");
        if (!(options.epsilon > 0.0))
            throw std::invalid_argument("Adam: epsilon must be positive");
        if (options.learning_rate < 0.0 || options.weight_decay < 0.0)
            throw std::invalid_argument("Adam: learning rate and weight decay must be non-negative");
    }
};

/// One bias-corrected Adam update followed by decoupled weight decay.
/// Parameters without a gradient are treated as having a zero gradient.
/// If any gradient is non-finite nothing is modified and NumericError is thrown.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state)
{
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].has_grad())
            continue;
        for (T g : params[i].grad().values())
            if (!std::isfinite(g))
                throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(i));
    }
    if (state.first_moment.empty()) {
        for (const auto& p : params) {
            state.first_moment.emplace_back(p.size(), T(0));
            state.second_moment.emplace_back(p.size(), T(0));
        }
    }
    if (state.first_moment.size() != params.size())
        throw ShapeError("adam_step: parameter list changed between steps");

    const auto& o = state.options;
    ++state.step;
    const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
    const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2);
    const T lr = static_cast<T>(o.learning_rate), eps = static_cast<T>(o.epsilon);
    const T inv_bc1 = static_cast<T>(1.0 / bc1), inv_bc2 = static_cast<T>(1.0 / bc2);
    const T decay = static_cast<T>(1.0 - o.learning_rate * o.weight_decay);

    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& value = params[i].mutable_value();
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        if (m.size() != value.size())
            throw ShapeError("adam_step: moment buffer size mismatch for parameter " + std::to_string(i));
        const bool has = params[i].has_grad();
        for (std::size_t j = 0; j < value.size(); ++j) {
            const T g = has ? params[i].grad()[j] : T(0);
            m[j] = b1 * m[j] + (T(1) - b1) * g;
            v[j] = b2 * v[j] + (T(1) - b2) * g * g;
            const T mhat = m[j] * inv_bc1;
            const T vhat = v[j] * inv_bc2;
            value[j] -= lr * mhat / (std::sqrt(vhat) + eps);
            if (o.weight_decay != 0.0)
                value[j] *= decay;
        }
    }
}

} // namespace seqpatch
