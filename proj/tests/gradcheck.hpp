#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "seqpatch/ops.hpp"
#include "seqpatch/random.hpp"

namespace seqpatch::testing {

using Loss = std::function<Tensor<double>()>;

struct GradCheck {
    double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
    double max_abs = 0.0;
    std::size_t checked = 0;
};

/// Central differences of `loss` w.r.t. the listed entries of each input, compared with
/// reverse-mode gradients. `which[i]` empty means every entry of inputs[i].
inline GradCheck check_gradients(const Loss& loss, std::vector<Tensor<double>> inputs,
                                 const std::vector<std::vector<std::size_t>>& which = {}, double h = 1e-5)
{
    for (auto& t : inputs)
        t.zero_grad();
    Tensor<double> l = loss();
    l.backward();
    double num2 = 0.0, ana2 = 0.0, diff2 = 0.0;
    GradCheck r;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        std::vector<std::size_t> idx;
        if (which.size() > i && !which[i].empty())
            idx = which[i];
        else
            for (std::size_t j = 0; j < inputs[i].size(); ++j)
                idx.push_back(j);
        for (std::size_t j : idx) {
            auto& v = inputs[i].mutable_value();
            const double saved = v[j];
            v[j] = saved + h;
            const double up = loss().value()[0];
            v[j] = saved - h;
            const double down = loss().value()[0];
            v[j] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = inputs[i].has_grad() ? inputs[i].grad()[j] : 0.0;
            num2 += numeric * numeric;
            ana2 += analytic * analytic;
            diff2 += (numeric - analytic) * (numeric - analytic);
            r.max_abs = std::max(r.max_abs, std::abs(numeric - analytic));
            ++r.checked;
        }
    }
    const double denom = std::max(std::sqrt(num2), std::sqrt(ana2));
    r.rel_error = denom > 0.0 ? std::sqrt(diff2) / denom : 0.0;
    return r;
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double lo = -1.0,
                                    double hi = 1.0)
{
    Array<double> a(std::move(shape));
    for (auto& v : a.values())
        v = rng.uniform(lo, hi);
    return Tensor<double>(std::move(a), requires_grad);
}

/// Fixed random weights so that sum(w * x) turns any tensor into a scalar with a
/// non-uniform upstream gradient.
inline Tensor<double> weighted_sum(const Tensor<double>& x, std::uint64_t seed = 99)
{
    Rng rng(seed);
    return sum(mul(x, random_tensor(x.shape(), rng, false)));
}

} // namespace seqpatch::testing
