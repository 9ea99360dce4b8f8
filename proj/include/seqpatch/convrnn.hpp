#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "seqpatch/ops.hpp"
#include "seqpatch/random.hpp"

namespace seqpatch {

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

/// Kernel filled uniformly in +-sqrt(6 / fan_in).
template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng)
{
    Array<T> a(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : a.values())
        v = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>(std::move(a), true);
}

/// Weights of one gated memory propagation unit. All kernels are [P,P,3,3].
///
///   r_t = sigmoid(W_xr * X_t + W_hr * H_{t-1} + b_r)
///   H_t = relu(W_xh * X_t + W_hh * (r_t o H_{t-1}) + b_h)
///
/// The reset gate multiplies the previous state element-wise before W_hh is applied.
template <typename T>
struct GatedUnitParams {
    Tensor<T> w_xr, w_hr, w_xh, w_hh;
    Tensor<T> b_r, b_h;

    std::size_t channels() const { return b_r.dim(0); }

    static GatedUnitParams zeros(std::size_t p)
    {
        if (p == 0)
            throw std::invalid_argument("GatedUnitParams: zero channels");
        auto k = [p] { return Tensor<T>::zeros({p, p, 3, 3}, true); };
        return {k(), k(), k(), k(), Tensor<T>::zeros({p}, true), Tensor<T>::zeros({p}, true)};
    }

    static GatedUnitParams random(std::size_t p, Rng& rng)
    {
        auto g = zeros(p);
        // Each pre-activation sums an input and a recurrent convolution.
        const std::size_t fan_in = 2 * p * 9;
        g.w_xr = fan_in_uniform<T>({p, p, 3, 3}, fan_in, rng);
        g.w_hr = fan_in_uniform<T>({p, p, 3, 3}, fan_in, rng);
        g.w_xh = fan_in_uniform<T>({p, p, 3, 3}, fan_in, rng);
        g.w_hh = fan_in_uniform<T>({p, p, 3, 3}, fan_in, rng);
        return g;
    }

    void append_to(NamedTensors<T>& out, const std::string& prefix) const
    {
        out.emplace_back(prefix + ".w_xr", w_xr);
        out.emplace_back(prefix + ".w_hr", w_hr);
        out.emplace_back(prefix + ".w_xh", w_xh);
        out.emplace_back(prefix + ".w_hh", w_hh);
        out.emplace_back(prefix + ".b_r", b_r);
        out.emplace_back(prefix + ".b_h", b_h);
    }
};

/// Two independent units plus the 1x1 memory fusion (2P -> P channels).
template <typename T>
struct BiDirectionalBlock {
    GatedUnitParams<T> forward_unit;
    GatedUnitParams<T> backward_unit;
    Tensor<T> fusion_w; // [P, 2P, 1, 1]; input channels [0,P) read the forward memory
    Tensor<T> fusion_b; // [P]

    std::size_t channels() const { return fusion_b.dim(0); }

    static BiDirectionalBlock zeros(std::size_t p)
    {
        return {GatedUnitParams<T>::zeros(p), GatedUnitParams<T>::zeros(p),
                Tensor<T>::zeros({p, 2 * p, 1, 1}, true), Tensor<T>::zeros({p}, true)};
    }

    static BiDirectionalBlock random(std::size_t p, Rng& rng)
    {
        BiDirectionalBlock b{GatedUnitParams<T>::random(p, rng), GatedUnitParams<T>::random(p, rng),
                             fan_in_uniform<T>({p, 2 * p, 1, 1}, 2 * p, rng), Tensor<T>::zeros({p}, true)};
        return b;
    }

    /// Same block with the directions exchanged, including the fusion input halves.
    BiDirectionalBlock swapped() const
    {
        const std::size_t p = channels();
        Array<T> w(fusion_w.shape());
        for (std::size_t o = 0; o < p; ++o)
            for (std::size_t i = 0; i < 2 * p; ++i)
                w[o * 2 * p + i] = fusion_w.value()[o * 2 * p + (i + p) % (2 * p)];
        return {backward_unit, forward_unit, Tensor<T>(std::move(w), fusion_w.requires_grad()), fusion_b};
    }

    void append_to(NamedTensors<T>& out, const std::string& prefix) const
    {
        forward_unit.append_to(out, prefix + ".fwd");
        backward_unit.append_to(out, prefix + ".bwd");
        out.emplace_back(prefix + ".fusion_w", fusion_w);
        out.emplace_back(prefix + ".fusion_b", fusion_b);
    }
};

namespace detail {

inline std::size_t channel_axis(const Shape& s) { return s.size() == 4 ? 1 : 0; }

template <typename T>
void check_sequence(const std::vector<Tensor<T>>& seq, std::size_t p)
{
    if (seq.empty())
        throw std::invalid_argument("convrnn: empty sequence");
    const Shape& s0 = seq.front().shape();
    if (s0.size() != 3 && s0.size() != 4)
        throw ShapeError("convrnn: steps must be [P,M,N] or [B,P,M,N], got " + shape_str(s0));
    if (s0[channel_axis(s0)] != p)
        throw ShapeError("convrnn: step has " + std::to_string(s0[channel_axis(s0)]) + " channels, unit expects "
                         + std::to_string(p));
    for (const auto& x : seq)
        if (x.shape() != s0)
            throw ShapeError("convrnn: non-uniform step shapes " + shape_str(x.shape()) + " vs " + shape_str(s0));
}

} // namespace detail

template <typename T>
Tensor<T> gated_step(const Tensor<T>& x, const Tensor<T>& h_prev, const GatedUnitParams<T>& u)
{
    detail::check_same_shape(x, h_prev, "gated_step");
    const Tensor<T> r = sigmoid(add(conv2d(x, u.w_xr, u.b_r), conv2d(h_prev, u.w_hr)));
    return relu(add(conv2d(x, u.w_xh, u.b_h), conv2d(mul(r, h_prev), u.w_hh)));
}

/// Reset gate values of a step, exposed for inspection.
template <typename T>
Tensor<T> reset_gate(const Tensor<T>& x, const Tensor<T>& h_prev, const GatedUnitParams<T>& u)
{
    detail::check_same_shape(x, h_prev, "reset_gate");
    return sigmoid(add(conv2d(x, u.w_xr, u.b_r), conv2d(h_prev, u.w_hr)));
}

/// Unrolls a unit over the sequence from a zero initial state.
template <typename T>
std::vector<Tensor<T>> run_forward(const std::vector<Tensor<T>>& seq, const GatedUnitParams<T>& u)
{
    detail::check_sequence(seq, u.channels());
    std::vector<Tensor<T>> out;
    out.reserve(seq.size());
    // With H_{-1} = 0 both recurrent terms vanish exactly.
    out.push_back(relu(conv2d(seq.front(), u.w_xh, u.b_h)));
    for (std::size_t t = 1; t < seq.size(); ++t)
        out.push_back(gated_step(seq[t], out.back(), u));
    return out;
}

/// Forward unit over the sequence, backward unit over its reverse (re-aligned to the
/// original positions), fused per step by the 1x1 convolution.
template <typename T>
std::vector<Tensor<T>> run_bidirectional(const std::vector<Tensor<T>>& seq, const BiDirectionalBlock<T>& block)
{
    detail::check_sequence(seq, block.channels());
    auto fwd = run_forward(seq, block.forward_unit);
    std::vector<Tensor<T>> reversed(seq.rbegin(), seq.rend());
    auto bwd = run_forward(reversed, block.backward_unit);
    std::reverse(bwd.begin(), bwd.end());
    const std::size_t axis = detail::channel_axis(seq.front().shape());
    std::vector<Tensor<T>> fused;
    fused.reserve(seq.size());
    for (std::size_t t = 0; t < seq.size(); ++t)
        fused.push_back(conv2d(concat<T>({fwd[t], bwd[t]}, axis), block.fusion_w, block.fusion_b));
    return fused;
}

} // namespace seqpatch
