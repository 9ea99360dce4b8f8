#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "seqpatch/metrics.hpp"
#include "seqpatch/png_io.hpp"

namespace seqpatch {

/// DSC per click offset; rows follow dy, columns dx. Invalid cells (click off the slice)
/// are empty.
struct SweepResult {
    std::vector<int> dx;
    std::vector<int> dy;
    std::vector<std::optional<double>> dsc;

    const std::optional<double>& at(std::size_t row, std::size_t col) const { return dsc[row * dx.size() + col]; }

    std::optional<double> at_offset(int ox, int oy) const
    {
        const auto cx = std::find(dx.begin(), dx.end(), ox);
        const auto cy = std::find(dy.begin(), dy.end(), oy);
        if (cx == dx.end() || cy == dy.end())
            return std::nullopt;
        return at(static_cast<std::size_t>(cy - dy.begin()), static_cast<std::size_t>(cx - dx.begin()));
    }

    /// Mean over valid cells whose offset length is within `tol` of `radius`.
    std::optional<double> mean_at_radius(double radius, double tol = 0.5) const
    {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t r = 0; r < dy.size(); ++r)
            for (std::size_t c = 0; c < dx.size(); ++c)
                if (at(r, c) && std::abs(std::hypot(dx[c], dy[r]) - radius) <= tol) {
                    sum += *at(r, c);
                    ++n;
                }
        if (n == 0)
            return std::nullopt;
        return sum / static_cast<double>(n);
    }

    /// Largest |DSC(dx,dy) - DSC(-dx,-dy)| over valid mirrored pairs, in DSC percent.
    double max_asymmetry() const
    {
        double worst = 0.0;
        for (std::size_t r = 0; r < dy.size(); ++r)
            for (std::size_t c = 0; c < dx.size(); ++c) {
                const auto mirror = at_offset(-dx[c], -dy[r]);
                if (at(r, c) && mirror)
                    worst = std::max(worst, std::abs(*at(r, c) - *mirror));
            }
        return worst;
    }

    /// Header row of dx values, then one row per dy; invalid cells are left blank.
    std::string csv() const
    {
        std::ostringstream out;
        out.precision(10);
        out << "dy\\dx";
        for (int x : dx)
            out << ',' << x;
        out << '\n';
        for (std::size_t r = 0; r < dy.size(); ++r) {
            out << dy[r];
            for (std::size_t c = 0; c < dx.size(); ++c) {
                out << ',';
                if (at(r, c))
                    out << *at(r, c);
            }
            out << '\n';
        }
        return out.str();
    }

    /// 8-bit grayscale PNG, one pixel per cell scaled up by `cell`; brightness = DSC/100,
    /// invalid cells black.
    std::string heatmap_png(std::size_t cell = 8) const
    {
        const std::size_t w = dx.size() * cell, h = dy.size() * cell;
        std::vector<float> px(w * h, 0.0f);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                if (const auto& v = at(y / cell, x / cell))
                    px[y * w + x] = static_cast<float>(*v / 100.0);
        return encode_unit_png(px.data(), w, h);
    }
};

/// Symmetric offset grid -radius..radius in steps of `step` (inclusive).
inline std::vector<int> offset_axis(int radius, int step)
{
    if (radius < 0 || step <= 0)
        throw std::invalid_argument("offset_axis: need radius >= 0 and step > 0");
    std::vector<int> out;
    for (int v = -(radius / step) * step; v <= radius; v += step)
        out.push_back(v);
    return out;
}

/// Segments `slice` once per click offset around `click` and scores each run against
/// `truth`. Cells run on up to `threads` workers; each writes only its own cell.
inline SweepResult click_sweep(const Mask& truth, Point click, std::vector<int> dx, std::vector<int> dy,
                               const std::function<Mask(Point)>& segment, unsigned threads = 1)
{
    SweepResult res{std::move(dx), std::move(dy), {}};
    res.dsc.resize(res.dx.size() * res.dy.size());
    const std::size_t cells = res.dsc.size();
    auto work = [&](std::size_t first) {
        for (std::size_t i = first; i < cells; i += std::max(1u, threads)) {
            const Point p{click.x + res.dx[i % res.dx.size()], click.y + res.dy[i / res.dx.size()]};
            if (!inside(p, truth.shape()))
                continue;
            res.dsc[i] = dsc(segment(p), truth);
        }
    };
    if (threads <= 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t)
            pool.emplace_back(work, t);
        for (auto& t : pool)
            t.join();
    }
    return res;
}

} // namespace seqpatch
