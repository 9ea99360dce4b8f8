#pragma once

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <optional>

#include "seqpatch/tensor.hpp"

namespace seqpatch {

namespace detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

// Columns per GEMM chunk in conv/deconv. Fixed so accumulation order never depends on batch size.
inline constexpr std::size_t kChunkColumns = 8192;

struct Geom {
    std::size_t n, c, h, w;
    bool batched;
};

inline Geom image_geom(const Shape& s, const char* op)
{
    if (s.size() == 3)
        return {1, s[0], s[1], s[2], false};
    if (s.size() == 4)
        return {s[0], s[1], s[2], s[3], true};
    throw ShapeError(std::string(op) + ": expected [C,H,W] or [N,C,H,W], got " + shape_str(s));
}

inline Shape image_shape(const Geom& g, std::size_t c, std::size_t h, std::size_t w)
{
    return g.batched ? Shape{g.n, c, h, w} : Shape{c, h, w};
}

inline std::size_t chunk_images(std::size_t n, std::size_t hw)
{
    return std::max<std::size_t>(1, std::min(n, (kChunkColumns + hw - 1) / hw));
}

// Valid destination columns [lo, hi) of a row shifted by dx, for width w.
inline std::pair<std::size_t, std::size_t> shifted_range(std::ptrdiff_t dx, std::size_t w)
{
    const auto sw = static_cast<std::ptrdiff_t>(w);
    const std::ptrdiff_t lo = std::clamp<std::ptrdiff_t>(-dx, 0, sw);
    const std::ptrdiff_t hi = std::clamp<std::ptrdiff_t>(sw - dx, 0, sw);
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi))};
}

// col[(ci*k + ky)*k + kx][(n - n0)*HW + y*W + x] = x[n, ci, y + ky - p, x + kx - p], zero outside.
template <typename T>
void im2col(const T* x, const Geom& g, std::size_t k, std::size_t n0, std::size_t nb, T* col)
{
    const std::size_t hw = g.h * g.w;
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
    const std::size_t cols = nb * hw;
    for (std::size_t ci = 0; ci < g.c; ++ci)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                T* row = col + ((ci * k + ky) * k + kx) * cols;
                const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
                const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
                const auto [lo, hi] = shifted_range(dx, g.w);
                for (std::size_t b = 0; b < nb; ++b) {
                    const T* plane = x + ((n0 + b) * g.c + ci) * hw;
                    for (std::size_t y = 0; y < g.h; ++y) {
                        T* dst = row + b * hw + y * g.w;
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y) + dy;
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                            std::fill(dst, dst + g.w, T(0));
                            continue;
                        }
                        const T* src = plane + static_cast<std::size_t>(iy) * g.w;
                        std::fill(dst, dst + lo, T(0));
                        std::copy(src + (static_cast<std::ptrdiff_t>(lo) + dx), src + (static_cast<std::ptrdiff_t>(hi) + dx),
                                  dst + lo);
                        std::fill(dst + hi, dst + g.w, T(0));
                    }
                }
            }
}

template <typename T>
void col2im_add(const T* col, const Geom& g, std::size_t k, std::size_t n0, std::size_t nb, T* x)
{
    const std::size_t hw = g.h * g.w;
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
    const std::size_t cols = nb * hw;
    for (std::size_t ci = 0; ci < g.c; ++ci)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                const T* row = col + ((ci * k + ky) * k + kx) * cols;
                const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
                const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
                const auto [lo, hi] = shifted_range(dx, g.w);
                for (std::size_t b = 0; b < nb; ++b) {
                    T* plane = x + ((n0 + b) * g.c + ci) * hw;
                    for (std::size_t y = 0; y < g.h; ++y) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y) + dy;
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h))
                            continue;
                        const T* src = row + b * hw + y * g.w;
                        T* dst = plane + static_cast<std::size_t>(iy) * g.w + dx;
                        for (std::size_t xx = lo; xx < hi; ++xx)
                            dst[xx] += src[xx];
                    }
                }
            }
}

// [N, C, HW] chunk <-> [C, nb*HW] matrix.
template <typename T>
void gather_channels(const T* x, std::size_t c, std::size_t hw, std::size_t n0, std::size_t nb, T* out)
{
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t b = 0; b < nb; ++b)
            std::copy_n(x + ((n0 + b) * c + ch) * hw, hw, out + ch * nb * hw + b * hw);
}

template <typename T>
void scatter_channels_add(const T* in, std::size_t c, std::size_t hw, std::size_t n0, std::size_t nb, T* x)
{
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t b = 0; b < nb; ++b) {
            const T* src = in + ch * nb * hw + b * hw;
            T* dst = x + ((n0 + b) * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i)
                dst[i] += src[i];
        }
}

template <typename T>
void accumulate(const std::shared_ptr<Node<T>>& node, const Array<T>& delta)
{
    if (!node->requires_grad)
        return;
    auto& g = node->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += delta[i];
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op)
{
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs "
                         + shape_str(b.shape()));
}

} // namespace detail

/// Stride-1 2-D convolution with zero ("same") padding. Kernel [C_out, C_in, k, k], k odd.
/// Accepts [C,H,W] or a batch [N,C,H,W]; `bias` may be an undefined tensor.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias = {})
{
    using namespace detail;
    const Geom g = image_geom(input.shape(), "conv2d");
    const Shape& ks = kernel.shape();
    if (ks.size() != 4 || ks[2] != ks[3] || ks[2] % 2 == 0)
        throw ShapeError("conv2d: kernel must be [C_out,C_in,k,k] with odd k, got " + shape_str(ks));
    if (ks[1] != g.c)
        throw ShapeError("conv2d: input has " + std::to_string(g.c) + " channels, kernel expects "
                         + std::to_string(ks[1]) + " (input " + shape_str(input.shape()) + ", kernel "
                         + shape_str(ks) + ")");
    if (g.h == 0 || g.w == 0)
        throw ShapeError("conv2d: empty spatial extent");
    const std::size_t co = ks[0], k = ks[2], hw = g.h * g.w, rows = g.c * k * k;
    if (bias.defined() && bias.shape() != Shape{co})
        throw ShapeError("conv2d: bias must be [" + std::to_string(co) + "], got " + shape_str(bias.shape()));

    Array<T> out(image_shape(g, co, g.h, g.w));
    const std::size_t chunk = chunk_images(g.n, hw);
    std::vector<T> col(rows * chunk * hw), res(co * chunk * hw);
    CMapRM<T> wm(kernel.value().data(), co, rows);
    for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
        const std::size_t nb = std::min(chunk, g.n - n0), cols = nb * hw;
        im2col(input.value().data(), g, k, n0, nb, col.data());
        MapRM<T> r(res.data(), co, cols);
        r.noalias() = wm * CMapRM<T>(col.data(), rows, cols);
        for (std::size_t c = 0; c < co; ++c) {
            const T bv = bias.defined() ? bias.value()[c] : T(0);
            for (std::size_t b = 0; b < nb; ++b) {
                const T* src = res.data() + c * cols + b * hw;
                T* dst = out.data() + ((n0 + b) * co + c) * hw;
                for (std::size_t i = 0; i < hw; ++i)
                    dst[i] = src[i] + bv;
            }
        }
    }

    return Tensor<T>::make_result(
        std::move(out), {input, kernel, bias.defined() ? bias : Tensor<T>()},
        [g, co, k, hw, rows, chunk](detail::Node<T>& self) {
            auto& x = self.inputs[0];
            auto& w = self.inputs[1];
            auto* b = self.inputs.size() > 2 && self.inputs[2] ? &self.inputs[2] : nullptr;
            std::vector<T> col(rows * chunk * hw), gy(co * chunk * hw), gcol;
            CMapRM<T> wm(w->value.data(), co, rows);
            T* gx = x->requires_grad ? x->grad_buffer().data() : nullptr;
            T* gw = w->requires_grad ? w->grad_buffer().data() : nullptr;
            T* gb = (b && (*b)->requires_grad) ? (*b)->grad_buffer().data() : nullptr;
            if (gx)
                gcol.resize(rows * chunk * hw);
            for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
                const std::size_t nb = std::min(chunk, g.n - n0), cols = nb * hw;
                gather_channels(self.grad.data(), co, hw, n0, nb, gy.data());
                CMapRM<T> gym(gy.data(), co, cols);
                if (gw) {
                    im2col(x->value.data(), g, k, n0, nb, col.data());
                    MapRM<T>(gw, co, rows).noalias() += gym * CMapRM<T>(col.data(), rows, cols).transpose();
                }
                if (gx) {
                    MapRM<T>(gcol.data(), rows, cols).noalias() = wm.transpose() * gym;
                    col2im_add(gcol.data(), g, k, n0, nb, gx);
                }
                if (gb)
                    for (std::size_t c = 0; c < co; ++c) {
                        T s = T(0);
                        for (std::size_t i = 0; i < cols; ++i)
                            s += gy[c * cols + i];
                        gb[c] += s;
                    }
            }
        });
}

/// 2x2 max pooling with stride 2. Gradient goes to the first maximal element of each window.
template <typename T>
Tensor<T> maxpool2(const Tensor<T>& input)
{
    using namespace detail;
    const Geom g = image_geom(input.shape(), "maxpool2");
    if (g.h % 2 || g.w % 2)
        throw ShapeError("maxpool2: spatial dims must be even, got " + shape_str(input.shape()));
    const std::size_t oh = g.h / 2, ow = g.w / 2;
    Array<T> out(image_shape(g, g.c, oh, ow));
    std::vector<std::size_t> argmax(out.size());
    const T* x = input.value().data();
    std::size_t o = 0;
    for (std::size_t p = 0; p < g.n * g.c; ++p) {
        const T* plane = x + p * g.h * g.w;
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
                std::size_t best = (2 * y) * g.w + 2 * xx;
                for (std::size_t cand : {best + 1, best + g.w, best + g.w + 1})
                    if (plane[cand] > plane[best] || std::isnan(plane[cand]))
                        best = cand;
                out[o] = plane[best];
                argmax[o] = p * g.h * g.w + best;
            }
    }
    return Tensor<T>::make_result(std::move(out), {input}, [argmax = std::move(argmax)](detail::Node<T>& self) {
        auto& gx = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < argmax.size(); ++i)
            gx[argmax[i]] += self.grad[i];
    });
}

/// Transposed convolution with a 2x2 kernel and stride 2: [C_in,H,W] -> [C_out,2H,2W].
/// Kernel layout is [C_in, C_out, 2, 2].
template <typename T>
Tensor<T> deconv2(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias = {})
{
    using namespace detail;
    const Geom g = image_geom(input.shape(), "deconv2");
    const Shape& ks = kernel.shape();
    if (ks.size() != 4 || ks[2] != 2 || ks[3] != 2 || ks[0] != g.c)
        throw ShapeError("deconv2: kernel must be [" + std::to_string(g.c) + ",C_out,2,2], got "
                         + shape_str(ks));
    const std::size_t co = ks[1], hw = g.h * g.w, ow = 2 * g.w;
    if (bias.defined() && bias.shape() != Shape{co})
        throw ShapeError("deconv2: bias must be [" + std::to_string(co) + "], got " + shape_str(bias.shape()));

    Array<T> out(image_shape(g, co, 2 * g.h, 2 * g.w));
    const std::size_t chunk = chunk_images(g.n, hw);
    std::vector<T> xin(g.c * chunk * hw), z(co * 4 * chunk * hw);
    CMapRM<T> wm(kernel.value().data(), g.c, co * 4);
    for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
        const std::size_t nb = std::min(chunk, g.n - n0), cols = nb * hw;
        gather_channels(input.value().data(), g.c, hw, n0, nb, xin.data());
        MapRM<T>(z.data(), co * 4, cols).noalias() = wm.transpose() * CMapRM<T>(xin.data(), g.c, cols);
        for (std::size_t c = 0; c < co; ++c) {
            const T bv = bias.defined() ? bias.value()[c] : T(0);
            for (std::size_t b = 0; b < nb; ++b) {
                T* dst = out.data() + ((n0 + b) * co + c) * 4 * hw;
                for (std::size_t a = 0; a < 4; ++a) {
                    const T* src = z.data() + (c * 4 + a) * cols + b * hw;
                    const std::size_t dy = a / 2, dx = a % 2;
                    for (std::size_t y = 0; y < g.h; ++y)
                        for (std::size_t xx = 0; xx < g.w; ++xx)
                            dst[(2 * y + dy) * ow + 2 * xx + dx] = src[y * g.w + xx] + bv;
                }
            }
        }
    }

    return Tensor<T>::make_result(
        std::move(out), {input, kernel, bias.defined() ? bias : Tensor<T>()},
        [g, co, hw, ow, chunk](detail::Node<T>& self) {
            auto& x = self.inputs[0];
            auto& w = self.inputs[1];
            auto* b = self.inputs.size() > 2 && self.inputs[2] ? &self.inputs[2] : nullptr;
            std::vector<T> xin(g.c * chunk * hw), gz(co * 4 * chunk * hw), gxin;
            CMapRM<T> wm(w->value.data(), g.c, co * 4);
            T* gx = x->requires_grad ? x->grad_buffer().data() : nullptr;
            T* gw = w->requires_grad ? w->grad_buffer().data() : nullptr;
            T* gb = (b && (*b)->requires_grad) ? (*b)->grad_buffer().data() : nullptr;
            if (gx)
                gxin.resize(g.c * chunk * hw);
            for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
                const std::size_t nb = std::min(chunk, g.n - n0), cols = nb * hw;
                for (std::size_t c = 0; c < co; ++c)
                    for (std::size_t bi = 0; bi < nb; ++bi) {
                        const T* src = self.grad.data() + ((n0 + bi) * co + c) * 4 * hw;
                        for (std::size_t a = 0; a < 4; ++a) {
                            T* dst = gz.data() + (c * 4 + a) * cols + bi * hw;
                            const std::size_t dy = a / 2, dx = a % 2;
                            for (std::size_t y = 0; y < g.h; ++y)
                                for (std::size_t xx = 0; xx < g.w; ++xx)
                                    dst[y * g.w + xx] = src[(2 * y + dy) * ow + 2 * xx + dx];
                        }
                    }
                CMapRM<T> gzm(gz.data(), co * 4, cols);
                if (gw) {
                    gather_channels(x->value.data(), g.c, hw, n0, nb, xin.data());
                    MapRM<T>(gw, g.c, co * 4).noalias() += CMapRM<T>(xin.data(), g.c, cols) * gzm.transpose();
                }
                if (gx) {
                    MapRM<T>(gxin.data(), g.c, cols).noalias() = wm * gzm;
                    scatter_channels_add(gxin.data(), g.c, hw, n0, nb, gx);
                }
                if (gb)
                    for (std::size_t c = 0; c < co; ++c) {
                        T s = T(0);
                        for (std::size_t a = 0; a < 4; ++a)
                            for (std::size_t i = 0; i < cols; ++i)
                                s += gz[(c * 4 + a) * cols + i];
                        gb[c] += s;
                    }
            }
        });
}

/// Concatenates along `axis`; all other dimensions must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis)
{
    if (parts.empty())
        throw ShapeError("concat: no inputs");
    Shape shape = parts.front().shape();
    if (axis >= shape.size())
        throw ShapeError("concat: axis out of range for " + shape_str(shape));
    std::size_t total = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s.size() != shape.size())
            throw ShapeError("concat: rank mismatch");
        total += s[axis];
        s[axis] = shape[axis];
        if (s != shape)
            throw ShapeError("concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(shape));
    }
    const std::size_t outer = shape_size(Shape(shape.begin(), shape.begin() + axis));
    const std::size_t inner = shape_size(Shape(shape.begin() + axis + 1, shape.end()));
    shape[axis] = total;
    Array<T> out(shape);
    std::vector<std::size_t> widths;
    for (std::size_t o = 0, off = 0; o < outer; ++o)
        for (const auto& p : parts) {
            const std::size_t len = p.shape()[axis] * inner;
            std::copy_n(p.value().data() + o * len, len, out.data() + off);
            off += len;
        }
    for (const auto& p : parts)
        widths.push_back(p.shape()[axis] * inner);
    return Tensor<T>::make_result(std::move(out), parts, [outer, widths](detail::Node<T>& self) {
        std::size_t off = 0;
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < widths.size(); ++i) {
                auto& in = self.inputs[i];
                if (in->requires_grad) {
                    T* g = in->grad_buffer().data() + o * widths[i];
                    for (std::size_t j = 0; j < widths[i]; ++j)
                        g[j] += self.grad[off + j];
                }
                off += widths[i];
            }
    });
}

/// Elements [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& input, std::size_t axis, std::size_t begin, std::size_t end)
{
    Shape shape = input.shape();
    if (axis >= shape.size() || begin >= end || end > shape[axis])
        throw ShapeError("slice: invalid range [" + std::to_string(begin) + "," + std::to_string(end)
                         + ") on axis " + std::to_string(axis) + " of " + shape_str(shape));
    const std::size_t outer = shape_size(Shape(shape.begin(), shape.begin() + axis));
    const std::size_t inner = shape_size(Shape(shape.begin() + axis + 1, shape.end()));
    const std::size_t full = shape[axis] * inner, len = (end - begin) * inner, off = begin * inner;
    shape[axis] = end - begin;
    Array<T> out(shape);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(input.value().data() + o * full + off, len, out.data() + o * len);
    return Tensor<T>::make_result(std::move(out), {input}, [outer, full, len, off](detail::Node<T>& self) {
        T* g = self.inputs[0]->grad_buffer().data();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < len; ++j)
                g[o * full + off + j] += self.grad[o * len + j];
    });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& input, Shape shape)
{
    Array<T> out = input.value().reshaped(std::move(shape));
    return Tensor<T>::make_result(std::move(out), {input}, [](detail::Node<T>& self) {
        detail::accumulate(self.inputs[0], self.grad);
    });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b)
{
    detail::check_same_shape(a, b, "add");
    Array<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] += b.value()[i];
    return Tensor<T>::make_result(std::move(out), {a, b}, [](detail::Node<T>& self) {
        detail::accumulate(self.inputs[0], self.grad);
        detail::accumulate(self.inputs[1], self.grad);
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b)
{
    detail::check_same_shape(a, b, "sub");
    Array<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] -= b.value()[i];
    return Tensor<T>::make_result(std::move(out), {a, b}, [](detail::Node<T>& self) {
        detail::accumulate(self.inputs[0], self.grad);
        if (self.inputs[1]->requires_grad) {
            auto& g = self.inputs[1]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] -= self.grad[i];
        }
    });
}

/// Element-wise (Hadamard) product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b)
{
    detail::check_same_shape(a, b, "mul");
    Array<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] *= b.value()[i];
    return Tensor<T>::make_result(std::move(out), {a, b}, [](detail::Node<T>& self) {
        auto& a = self.inputs[0];
        auto& b = self.inputs[1];
        if (a->requires_grad) {
            auto& g = a->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += self.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            auto& g = b->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += self.grad[i] * a->value[i];
        }
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor)
{
    Array<T> out = a.value();
    for (auto& v : out.values())
        v *= factor;
    return Tensor<T>::make_result(std::move(out), {a}, [factor](detail::Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += self.grad[i] * factor;
    });
}

/// Logistic sigmoid, clamped so results stay strictly inside (0,1) even when saturated.
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a)
{
    constexpr T lo = std::numeric_limits<T>::min();
    const T hi = std::nextafter(T(1), T(0));
    Array<T> out = a.value();
    for (auto& v : out.values()) {
        const T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
        v = std::clamp(s, lo, hi);
    }
    return Tensor<T>::make_result(std::move(out), {a}, [](detail::Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T y = self.value[i];
            g[i] += self.grad[i] * y * (T(1) - y);
        }
    });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a)
{
    Array<T> out = a.value();
    for (auto& v : out.values())
        v = v < T(0) ? T(0) : v; // NaN passes through
    return Tensor<T>::make_result(std::move(out), {a}, [](detail::Node<T>& self) {
        auto& in = self.inputs[0];
        auto& g = in->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (in->value[i] > T(0))
                g[i] += self.grad[i];
    });
}

/// Sum of all elements as a scalar (shape []).
template <typename T>
Tensor<T> sum(const Tensor<T>& a)
{
    double s = 0.0;
    for (T v : a.value().values())
        s += static_cast<double>(v);
    Array<T> out(Shape{}, std::vector<T>{static_cast<T>(s)});
    return Tensor<T>::make_result(std::move(out), {a}, [](detail::Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        const T d = self.grad[0];
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += d;
    });
}

template <typename T>
constexpr T bce_epsilon()
{
    return std::is_same_v<T, float> ? T(1e-7) : T(1e-12);
}

/// Mean binary cross entropy. Predictions are clamped to [eps, 1-eps]; targets must be 0 or 1.
template <typename T>
Tensor<T> bce(const Tensor<T>& prediction, const Array<T>& target)
{
    if (prediction.shape() != target.shape())
        throw ShapeError("bce: prediction " + shape_str(prediction.shape()) + " vs target "
                         + shape_str(target.shape()));
    for (T t : target.values())
        if (t != T(0) && t != T(1))
            throw std::invalid_argument("bce: target values must be 0 or 1");
    const T eps = bce_epsilon<T>();
    const std::size_t n = target.size();
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const T p = std::clamp(prediction.value()[i], eps, T(1) - eps);
        loss -= target[i] == T(1) ? std::log(static_cast<double>(p)) : std::log1p(-static_cast<double>(p));
    }
    Array<T> out(Shape{}, std::vector<T>{static_cast<T>(loss / static_cast<double>(n))});
    return Tensor<T>::make_result(std::move(out), {prediction}, [target, eps, n](detail::Node<T>& self) {
        auto& in = self.inputs[0];
        auto& g = in->grad_buffer();
        const T scale = self.grad[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const T p = in->value[i];
            if (p < eps || p > T(1) - eps)
                continue;
            g[i] += scale * (target[i] == T(1) ? -T(1) / p : T(1) / (T(1) - p));
        }
    });
}

} // namespace seqpatch
