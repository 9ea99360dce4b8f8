#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqpatch/tensor.hpp"

namespace seqpatch {

using Image = Array<float>;        // [H, W]
using Mask = Array<std::uint8_t>;  // [H, W], values 0/1

struct Point {
    int x = 0;
    int y = 0;
    bool operator==(const Point&) const = default;
    auto operator<=>(const Point&) const = default;
};

/// Geometry of the rays cast from a clicked point.
struct ExtractionConfig {
    Point center;
    std::size_t num_rays = 16;
    std::size_t stride = 4;
    std::size_t patch_size = 32;
    std::size_t seq_len = 8;

    void validate() const
    {
        if (num_rays < 1)
            throw std::invalid_argument("ExtractionConfig: num_rays must be >= 1");
        if (seq_len < 1)
            throw std::invalid_argument("ExtractionConfig: seq_len must be >= 1");
        if (patch_size == 0 || patch_size % 2 != 0)
            throw std::invalid_argument("ExtractionConfig: patch_size must be even and positive");
        if (stride == 0 || stride >= patch_size)
            throw std::invalid_argument("ExtractionConfig: stride must be in [1, patch_size) so consecutive patches overlap");
    }
};

struct PatchSequence {
    std::size_t ray_index = 0;
    double angle = 0.0;
    std::vector<Image> patches;
    std::vector<Image> label_patches; // empty when no mask was supplied
    std::vector<Point> patch_centers;
};

inline std::size_t image_height(const Shape& s) { return s.at(0); }
inline std::size_t image_width(const Shape& s) { return s.at(1); }

/// Round half up: floor(v + 0.5).
inline int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

/// Unit direction of ray `i`; ray 0 points along +x and the angle grows toward +y.
inline std::pair<double, double> ray_direction(std::size_t i, std::size_t num_rays)
{
    const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(num_rays);
    double c = std::cos(a), s = std::sin(a);
    // Exact zeros on the axes keep the geometry symmetric under quarter turns.
    if (std::abs(c) < 1e-12)
        c = 0.0;
    if (std::abs(s) < 1e-12)
        s = 0.0;
    return {c, s};
}

inline std::vector<Point> ray_patch_centers(const ExtractionConfig& cfg, std::size_t ray)
{
    const auto [c, s] = ray_direction(ray, cfg.num_rays);
    std::vector<Point> out;
    out.reserve(cfg.seq_len);
    for (std::size_t t = 0; t < cfg.seq_len; ++t) {
        const double d = static_cast<double>(t * cfg.stride);
        out.push_back({round_half_up(cfg.center.x + d * c), round_half_up(cfg.center.y + d * s)});
    }
    return out;
}

/// Axis-aligned size x size crop covering rows [cy - size/2, cy + size/2) and the same for
/// columns. Pixels outside the image read as zero.
template <typename T>
Array<T> crop_patch(const Array<T>& img, Point center, std::size_t size)
{
    const auto h = static_cast<int>(image_height(img.shape()));
    const auto w = static_cast<int>(image_width(img.shape()));
    const int half = static_cast<int>(size / 2);
    Array<T> out(Shape{size, size});
    for (int r = 0; r < static_cast<int>(size); ++r) {
        const int y = center.y - half + r;
        if (y < 0 || y >= h)
            continue;
        for (int c = 0; c < static_cast<int>(size); ++c) {
            const int x = center.x - half + c;
            if (x >= 0 && x < w)
                out[static_cast<std::size_t>(r) * size + c] = img[static_cast<std::size_t>(y) * w + x];
        }
    }
    return out;
}

inline bool inside(Point p, const Shape& s)
{
    return p.x >= 0 && p.y >= 0 && static_cast<std::size_t>(p.x) < image_width(s)
           && static_cast<std::size_t>(p.y) < image_height(s);
}

/// Casts cfg.num_rays rays from cfg.center and crops cfg.seq_len patches along each,
/// inside to outside. Label patches are cropped identically when a mask is supplied.
inline std::vector<PatchSequence> extract_sequences(const Image& slice, const Mask* mask, const ExtractionConfig& cfg)
{
    cfg.validate();
    if (slice.ndim() != 2)
        throw ShapeError("extract_sequences: slice must be 2-D, got " + shape_str(slice.shape()));
    if (mask && mask->shape() != slice.shape())
        throw ShapeError("extract_sequences: mask " + shape_str(mask->shape()) + " vs slice " + shape_str(slice.shape()));
    if (!inside(cfg.center, slice.shape()))
        throw std::out_of_range("extract_sequences: center (" + std::to_string(cfg.center.x) + ","
                                + std::to_string(cfg.center.y) + ") outside " + shape_str(slice.shape()));
    std::vector<PatchSequence> out(cfg.num_rays);
    for (std::size_t i = 0; i < cfg.num_rays; ++i) {
        auto& seq = out[i];
        seq.ray_index = i;
        seq.angle = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(cfg.num_rays);
        seq.patch_centers = ray_patch_centers(cfg, i);
        for (const Point& p : seq.patch_centers) {
            seq.patches.push_back(crop_patch(slice, p, cfg.patch_size));
            if (mask)
                seq.label_patches.push_back(crop_patch(*mask, p, cfg.patch_size).cast<float>());
        }
    }
    return out;
}

/// Integer-rounded (half up) centroid of the foreground pixels.
inline Point training_center(const Mask& mask)
{
    if (mask.ndim() != 2)
        throw ShapeError("training_center: mask must be 2-D");
    const std::size_t w = image_width(mask.shape());
    std::int64_t sx = 0, sy = 0, n = 0;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) {
            sx += static_cast<std::int64_t>(i % w);
            sy += static_cast<std::int64_t>(i / w);
            ++n;
        }
    if (n == 0)
        throw std::invalid_argument("training_center: empty mask");
    // floor(s/n + 1/2) = floor((2s + n) / 2n), exact in integers.
    auto rnd = [n](std::int64_t s) { return static_cast<int>((2 * s + n) / (2 * n)); };
    return {rnd(sx), rnd(sy)};
}

/// Per-image standardization (value - mean) / std; a constant image maps to zeros.
inline Image normalize_intensity(const Image& img)
{
    double mean = 0.0;
    for (float v : img.values())
        mean += v;
    mean /= static_cast<double>(img.size());
    double var = 0.0;
    for (float v : img.values())
        var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(img.size()));
    Image out(img.shape());
    for (std::size_t i = 0; i < img.size(); ++i)
        out[i] = static_cast<float>(sd == 0.0 ? 0.0 : (img[i] - mean) / sd);
    return out;
}

/// Stacks sequences into the network's time-major layout [K*R, 1, S, S] (index t*R + r).
inline Array<float> batch_patches(const std::vector<PatchSequence>& seqs, bool labels)
{
    if (seqs.empty())
        throw std::invalid_argument("batch_patches: no sequences");
    const std::size_t r = seqs.size(), k = seqs.front().patch_centers.size();
    const std::size_t s = seqs.front().patches.front().dim(0);
    Array<float> out(Shape{k * r, 1, s, s});
    for (std::size_t i = 0; i < r; ++i) {
        const auto& src = labels ? seqs[i].label_patches : seqs[i].patches;
        if (src.size() != k)
            throw ShapeError("batch_patches: sequence " + std::to_string(i) + " has "
                             + std::to_string(src.size()) + " patches, expected " + std::to_string(k));
        for (std::size_t t = 0; t < k; ++t)
            std::copy_n(src[t].data(), s * s, out.data() + (t * r + i) * s * s);
    }
    return out;
}

struct SequencePrediction {
    std::vector<Point> patch_centers;
    std::vector<Image> probabilities; // one [S,S] map per patch
};

/// Inverse of batch_patches for network outputs.
inline std::vector<SequencePrediction> unbatch_predictions(const Array<float>& probs, const std::vector<PatchSequence>& seqs)
{
    const std::size_t r = seqs.size(), k = seqs.front().patch_centers.size(), s = probs.dim(2);
    if (probs.dim(0) != k * r)
        throw ShapeError("unbatch_predictions: batch size mismatch");
    std::vector<SequencePrediction> out(r);
    for (std::size_t i = 0; i < r; ++i) {
        out[i].patch_centers = seqs[i].patch_centers;
        for (std::size_t t = 0; t < k; ++t) {
            Image m(Shape{s, s});
            std::copy_n(probs.data() + (t * r + i) * s * s, s * s, m.data());
            out[i].probabilities.push_back(std::move(m));
        }
    }
    return out;
}

/// Accumulated patch probabilities over a slice.
struct LikelihoodMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> prob_sum;
    std::vector<std::uint32_t> coverage;

    LikelihoodMap() = default;
    LikelihoodMap(std::size_t h, std::size_t w) : height(h), width(w), prob_sum(h * w, 0.0), coverage(h * w, 0) {}

    double fused(std::size_t i) const { return coverage[i] ? prob_sum[i] / coverage[i] : 0.0; }

    Image fused_map() const
    {
        Image out(Shape{height, width});
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = static_cast<float>(fused(i));
        return out;
    }

    bool covered(std::size_t i) const { return coverage[i] > 0; }
};

/// Coverage-normalized mean of all patch probabilities, in ray then step order.
inline LikelihoodMap fuse(const std::vector<SequencePrediction>& preds, std::size_t height, std::size_t width)
{
    LikelihoodMap map(height, width);
    for (const auto& seq : preds) {
        if (seq.patch_centers.size() != seq.probabilities.size())
            throw ShapeError("fuse: centers and probability maps differ in count");
        for (std::size_t t = 0; t < seq.patch_centers.size(); ++t) {
            const Image& p = seq.probabilities[t];
            const std::size_t s = p.dim(0);
            const int half = static_cast<int>(s / 2);
            const Point c = seq.patch_centers[t];
            for (int r = 0; r < static_cast<int>(s); ++r) {
                const int y = c.y - half + r;
                if (y < 0 || y >= static_cast<int>(height))
                    continue;
                for (int col = 0; col < static_cast<int>(s); ++col) {
                    const int x = c.x - half + col;
                    if (x < 0 || x >= static_cast<int>(width))
                        continue;
                    const std::size_t i = static_cast<std::size_t>(y) * width + x;
                    map.prob_sum[i] += p[static_cast<std::size_t>(r) * s + col];
                    ++map.coverage[i];
                }
            }
        }
    }
    return map;
}

/// Foreground where fused >= tau (ties go to foreground); uncovered pixels are background.
inline Mask threshold(const LikelihoodMap& map, double tau = 0.5)
{
    Mask out(Shape{map.height, map.width});
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = map.covered(i) && map.fused(i) >= tau ? 1 : 0;
    return out;
}

} // namespace seqpatch
