#pragma once

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "seqpatch/errors.hpp"
#include "seqpatch/ray_pipeline.hpp"

namespace seqpatch {

/// Binary prediction and ground truth over the same grid. dims = (D, H, W) with D = 1 for a
/// slice; spacing in mm along (z, y, x).
struct MaskPair {
    std::array<std::size_t, 3> dims{1, 0, 0};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::vector<std::uint8_t> prediction;
    std::vector<std::uint8_t> ground_truth;

    MaskPair() = default;

    MaskPair(std::array<std::size_t, 3> d, std::array<double, 3> s, std::vector<std::uint8_t> pred,
             std::vector<std::uint8_t> gt)
        : dims(d), spacing(s), prediction(std::move(pred)), ground_truth(std::move(gt))
    {
        validate();
    }

    /// Slice pair with in-plane spacing (y, x).
    MaskPair(const Mask& pred, const Mask& gt, double spacing_y = 1.0, double spacing_x = 1.0)
    {
        if (pred.shape() != gt.shape())
            throw ShapeError("MaskPair: prediction " + shape_str(pred.shape()) + " vs ground truth "
                             + shape_str(gt.shape()));
        if (pred.ndim() != 2)
            throw ShapeError("MaskPair: masks must be 2-D");
        dims = {1, pred.dim(0), pred.dim(1)};
        spacing = {1.0, spacing_y, spacing_x};
        prediction.assign(pred.values().begin(), pred.values().end());
        ground_truth.assign(gt.values().begin(), gt.values().end());
        validate();
    }

    std::size_t size() const { return dims[0] * dims[1] * dims[2]; }

    void validate() const
    {
        if (prediction.size() != size() || ground_truth.size() != size())
            throw ShapeError("MaskPair: array sizes do not match dims");
        for (double s : spacing)
            if (!(s > 0.0))
                throw std::invalid_argument("MaskPair: spacing must be positive");
    }
};

inline std::size_t count_foreground(const std::vector<std::uint8_t>& m)
{
    return static_cast<std::size_t>(std::count_if(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; }));
}

/// Dice overlap in percent; 100 when both masks are empty.
inline double dsc(const MaskPair& p)
{
    std::size_t a = 0, b = 0, both = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const bool x = p.prediction[i] != 0, y = p.ground_truth[i] != 0;
        a += x;
        b += y;
        both += x && y;
    }
    if (a + b == 0)
        return 100.0;
    return 100.0 * 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

inline double dsc(const Mask& pred, const Mask& gt) { return dsc(MaskPair(pred, gt)); }

/// Foreground centroid in mm, ordered (x, y, z).
inline std::array<double, 3> centroid_mm(const std::vector<std::uint8_t>& m, const std::array<std::size_t, 3>& dims,
                                         const std::array<double, 3>& spacing)
{
    std::int64_t sx = 0, sy = 0, sz = 0, n = 0;
    std::size_t i = 0;
    for (std::size_t z = 0; z < dims[0]; ++z)
        for (std::size_t y = 0; y < dims[1]; ++y)
            for (std::size_t x = 0; x < dims[2]; ++x, ++i)
                if (m[i]) {
                    sx += static_cast<std::int64_t>(x);
                    sy += static_cast<std::int64_t>(y);
                    sz += static_cast<std::int64_t>(z);
                    ++n;
                }
    if (n == 0)
        throw std::invalid_argument("centroid of an empty mask");
    const double dn = static_cast<double>(n);
    return {static_cast<double>(sx) / dn * spacing[2], static_cast<double>(sy) / dn * spacing[1],
            static_cast<double>(sz) / dn * spacing[0]};
}

/// Per-axis absolute centroid offset in mm, ordered (x, y, z).
inline std::array<double, 3> centroid_distance(const MaskPair& p)
{
    const auto a = centroid_mm(p.prediction, p.dims, p.spacing);
    const auto b = centroid_mm(p.ground_truth, p.dims, p.spacing);
    return {std::abs(a[0] - b[0]), std::abs(a[1] - b[1]), std::abs(a[2] - b[2])};
}

struct Voxel {
    std::size_t z, y, x;
};

/// Foreground voxels with at least one background face neighbour, in raster order.
/// Neighbours outside the grid count as background; z neighbours exist only when D > 1.
inline std::vector<Voxel> boundary_voxels(const std::vector<std::uint8_t>& m, const std::array<std::size_t, 3>& dims)
{
    const auto [d, h, w] = dims;
    auto fg = [&](std::ptrdiff_t z, std::ptrdiff_t y, std::ptrdiff_t x) {
        if (z < 0 || y < 0 || x < 0 || z >= static_cast<std::ptrdiff_t>(d) || y >= static_cast<std::ptrdiff_t>(h)
            || x >= static_cast<std::ptrdiff_t>(w))
            return false;
        return m[(static_cast<std::size_t>(z) * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x)] != 0;
    };
    std::vector<Voxel> out;
    for (std::size_t z = 0; z < d; ++z)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const auto zi = static_cast<std::ptrdiff_t>(z), yi = static_cast<std::ptrdiff_t>(y),
                           xi = static_cast<std::ptrdiff_t>(x);
                if (!fg(zi, yi, xi))
                    continue;
                bool edge = !fg(zi, yi - 1, xi) || !fg(zi, yi + 1, xi) || !fg(zi, yi, xi - 1) || !fg(zi, yi, xi + 1);
                if (d > 1)
                    edge = edge || !fg(zi - 1, yi, xi) || !fg(zi + 1, yi, xi);
                if (edge)
                    out.push_back({z, y, x});
            }
    return out;
}

/// For every point of `from`, the physical distance to the nearest point of `to`.
inline std::vector<double> directed_distances(const std::vector<Voxel>& from, const std::vector<Voxel>& to,
                                              const std::array<double, 3>& spacing)
{
    std::vector<double> out;
    out.reserve(from.size());
    for (const auto& a : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& b : to) {
            const double dz = (static_cast<double>(a.z) - static_cast<double>(b.z)) * spacing[0];
            const double dy = (static_cast<double>(a.y) - static_cast<double>(b.y)) * spacing[1];
            const double dx = (static_cast<double>(a.x) - static_cast<double>(b.x)) * spacing[2];
            best = std::min(best, dz * dz + dy * dy + dx * dx);
        }
        out.push_back(std::sqrt(best));
    }
    return out;
}

/// Linear-interpolation percentile (q in [0,1]) of an unsorted list.
inline double percentile(std::vector<double> v, double q)
{
    if (v.empty())
        throw std::invalid_argument("percentile of an empty list");
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct BoundaryMetrics {
    double hd95 = 0.0;
    double abd = 0.0;
};

/// hd95 and mean over the pooled directed distances prediction->truth then truth->prediction.
inline BoundaryMetrics boundary_metrics(const MaskPair& p)
{
    const auto a = boundary_voxels(p.prediction, p.dims);
    const auto b = boundary_voxels(p.ground_truth, p.dims);
    if (a.empty() || b.empty())
        throw std::invalid_argument("boundary_metrics: empty mask");
    auto pooled = directed_distances(a, b, p.spacing);
    const auto back = directed_distances(b, a, p.spacing);
    pooled.insert(pooled.end(), back.begin(), back.end());
    double sum = 0.0;
    for (double d : pooled)
        sum += d;
    return {percentile(pooled, 0.95), sum / static_cast<double>(pooled.size())};
}

/// Absolute relative volume difference in percent, relative to the ground truth.
inline double arvd(const MaskPair& p)
{
    const auto a = count_foreground(p.prediction);
    const auto b = count_foreground(p.ground_truth);
    if (b == 0)
        throw std::invalid_argument("arvd: empty ground truth");
    const double diff = a > b ? static_cast<double>(a - b) : static_cast<double>(b - a);
    return 100.0 * diff / static_cast<double>(b);
}

/// All metrics for one pair. Distance metrics are absent when either mask is empty, aRVD
/// when the ground truth is empty.
struct MetricReport {
    double dsc = 0.0;
    std::optional<std::array<double, 3>> cd;
    std::optional<double> hd95;
    std::optional<double> abd;
    std::optional<double> arvd;
};

inline MetricReport evaluate(const MaskPair& p)
{
    MetricReport r;
    r.dsc = dsc(p);
    const bool pred_any = count_foreground(p.prediction) > 0;
    const bool gt_any = count_foreground(p.ground_truth) > 0;
    if (pred_any && gt_any) {
        r.cd = centroid_distance(p);
        const auto bm = boundary_metrics(p);
        r.hd95 = bm.hd95;
        r.abd = bm.abd;
    }
    if (gt_any)
        r.arvd = arvd(p);
    return r;
}

inline nlohmann::json to_json(const MetricReport& r)
{
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json j{{"dsc", r.dsc}, {"hd95", opt(r.hd95)}, {"abd", opt(r.abd)}, {"arvd", opt(r.arvd)}};
    j["cd"] = r.cd ? nlohmann::json{{"x", (*r.cd)[0]}, {"y", (*r.cd)[1]}, {"z", (*r.cd)[2]}} : nlohmann::json(nullptr);
    return j;
}

} // namespace seqpatch
