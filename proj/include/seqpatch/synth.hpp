#pragma once

#include "json.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "seqpatch/random.hpp"
#include "seqpatch/volume_io.hpp"

namespace seqpatch {

enum class ObjectKind { disk, ellipse, blob };

inline ObjectKind object_kind_from_string(const std::string& s)
{
    if (s == "disk")
        return ObjectKind::disk;
    if (s == "ellipse")
        return ObjectKind::ellipse;
    if (s == "blob")
        return ObjectKind::blob;
    throw std::invalid_argument("unknown object kind '" + s + "' (expected disk, ellipse, blob)");
}

inline std::string to_string(ObjectKind k)
{
    switch (k) {
    case ObjectKind::disk:
        return "disk";
    case ObjectKind::ellipse:
        return "ellipse";
    case ObjectKind::blob:
        return "blob";
    }
    return "?";
}

/// Generator settings for blurry-boundary single-object slices.
struct SynthSpec {
    std::size_t image_size = 96;
    ObjectKind kind = ObjectKind::disk;
    double radius_min = 12.0;
    double radius_max = 24.0;
    double blur_sigma = 2.0;
    double contrast = 1.0;
    double background = 0.0;
    double noise_sigma = 0.25;
    std::size_t distractors = 2;
    std::uint64_t seed = 7;
    /// Place every object at the image center instead of a random position.
    bool centered = false;

    static constexpr double kBlobAmplitude = 0.2;

    /// Largest distance of an object pixel from its center.
    double extent() const { return kind == ObjectKind::blob ? radius_max * (1.0 + kBlobAmplitude) : radius_max; }

    void validate() const
    {
        if (!(radius_min > 0.0) || radius_max < radius_min)
            throw std::invalid_argument("SynthSpec: need 0 < radius_min <= radius_max");
        if (2.0 * (extent() + 2.0) > static_cast<double>(image_size))
            throw std::invalid_argument("SynthSpec: radius range does not fit inside the image");
        if (blur_sigma < 0.0 || noise_sigma < 0.0)
            throw std::invalid_argument("SynthSpec: sigmas must be non-negative");
    }
};

inline nlohmann::json to_json(const SynthSpec& s)
{
    return {{"image_size", s.image_size},   {"kind", to_string(s.kind)},  {"radius_min", s.radius_min},
            {"radius_max", s.radius_max},   {"blur_sigma", s.blur_sigma}, {"contrast", s.contrast},
            {"background", s.background},   {"noise_sigma", s.noise_sigma}, {"distractors", s.distractors},
            {"seed", s.seed},               {"centered", s.centered}};
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j)
{
    SynthSpec s;
    s.image_size = j.value("image_size", s.image_size);
    if (j.contains("kind"))
        s.kind = object_kind_from_string(j.at("kind").get<std::string>());
    s.radius_min = j.value("radius_min", s.radius_min);
    s.radius_max = j.value("radius_max", s.radius_max);
    s.blur_sigma = j.value("blur_sigma", s.blur_sigma);
    s.contrast = j.value("contrast", s.contrast);
    s.background = j.value("background", s.background);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.distractors = j.value("distractors", s.distractors);
    s.seed = j.value("seed", s.seed);
    s.centered = j.value("centered", s.centered);
    s.validate();
    return s;
}

/// Shape parameters of one generated object.
struct SynthObject {
    double cx = 0, cy = 0;
    double a = 0, b = 0; // semi-axes (equal for disks; base radius for blobs)
    double angle = 0;
    std::vector<double> harmonics; // blob: amplitude, phase pairs for orders 2..4

    bool contains(double x, double y) const
    {
        const double dx = x - cx, dy = y - cy;
        const double c = std::cos(angle), s = std::sin(angle);
        const double u = c * dx + s * dy, v = -s * dx + c * dy;
        if (harmonics.empty())
            return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
        const double theta = std::atan2(dy, dx);
        double r = a;
        for (std::size_t k = 0; k < harmonics.size() / 2; ++k)
            r += a * harmonics[2 * k] * std::cos(static_cast<double>(k + 2) * theta + harmonics[2 * k + 1]);
        return dx * dx + dy * dy <= r * r;
    }
};

/// Pixel (x, y) is foreground when its center lies inside the object.
inline Mask rasterize(const SynthObject& obj, std::size_t size)
{
    Mask m(Shape{size, size});
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
            m[y * size + x] = obj.contains(static_cast<double>(x), static_cast<double>(y)) ? 1 : 0;
    return m;
}

/// Separable Gaussian blur (kernel radius ceil(3 sigma), edges clamped). sigma 0 is the identity.
inline std::vector<double> gaussian_blur(const std::vector<double>& img, std::size_t h, std::size_t w, double sigma)
{
    if (sigma <= 0.0)
        return img;
    const int rad = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * rad + 1);
    double total = 0.0;
    for (int i = -rad; i <= rad; ++i)
        total += k[i + rad] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k)
        v /= total;
    auto clampi = [](int v, int n) { return std::min(std::max(v, 0), n - 1); };
    std::vector<double> tmp(img.size()), out(img.size());
    const int hi = static_cast<int>(h), wi = static_cast<int>(w);
    for (int y = 0; y < hi; ++y)
        for (int x = 0; x < wi; ++x) {
            double acc = 0.0;
            for (int i = -rad; i <= rad; ++i)
                acc += k[i + rad] * img[y * w + clampi(x + i, wi)];
            tmp[y * w + x] = acc;
        }
    for (int y = 0; y < hi; ++y)
        for (int x = 0; x < wi; ++x) {
            double acc = 0.0;
            for (int i = -rad; i <= rad; ++i)
                acc += k[i + rad] * tmp[clampi(y + i, hi) * w + x];
            out[y * w + x] = acc;
        }
    return out;
}

struct SynthSlice {
    SynthObject object;
    Image image;
    Mask mask;
};

/// Draws the next slice from `rng`.
inline SynthSlice synth_slice(const SynthSpec& spec, Rng& rng)
{
    const std::size_t n = spec.image_size;
    const double mid = (static_cast<double>(n) - 1.0) / 2.0;
    SynthSlice out;
    SynthObject& o = out.object;
    const double margin = spec.extent() + 1.0;
    o.cx = spec.centered ? mid : rng.uniform(margin, static_cast<double>(n) - 1.0 - margin);
    o.cy = spec.centered ? mid : rng.uniform(margin, static_cast<double>(n) - 1.0 - margin);
    o.a = rng.uniform(spec.radius_min, spec.radius_max);
    o.b = o.a;
    if (spec.kind == ObjectKind::ellipse) {
        o.b = rng.uniform(spec.radius_min, spec.radius_max);
        o.angle = rng.uniform(0.0, std::numbers::pi);
    } else if (spec.kind == ObjectKind::blob) {
        for (int k = 0; k < 3; ++k) {
            o.harmonics.push_back(rng.uniform(0.0, SynthSpec::kBlobAmplitude / 3.0));
            o.harmonics.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
        }
    }
    out.mask = rasterize(o, n);

    std::vector<double> shape(n * n);
    for (std::size_t i = 0; i < shape.size(); ++i)
        shape[i] = out.mask[i];
    shape = gaussian_blur(shape, n, n, spec.blur_sigma);

    std::vector<double> img(n * n);
    for (std::size_t i = 0; i < img.size(); ++i)
        img[i] = spec.background + spec.contrast * shape[i];

    // Distractors: faint Gaussian spots whose centers stay clear of the object.
    for (std::size_t d = 0; d < spec.distractors; ++d) {
        double dx = 0, dy = 0;
        for (int tries = 0; tries < 100; ++tries) {
            dx = rng.uniform(0.0, static_cast<double>(n - 1));
            dy = rng.uniform(0.0, static_cast<double>(n - 1));
            if (std::hypot(dx - o.cx, dy - o.cy) > spec.extent() + 10.0)
                break;
        }
        const double amp = spec.contrast * rng.uniform(0.3, 0.7);
        const double s = rng.uniform(2.0, 4.0);
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) {
                const double r2 = (x - dx) * (x - dx) + (y - dy) * (y - dy);
                img[y * n + x] += amp * std::exp(-0.5 * r2 / (s * s));
            }
    }
    if (spec.noise_sigma > 0.0)
        for (auto& v : img)
            v += spec.noise_sigma * rng.normal();

    out.image = Image(Shape{n, n});
    for (std::size_t i = 0; i < img.size(); ++i)
        out.image[i] = static_cast<float>(img[i]);
    return out;
}

/// Volume of `n_slices` independent slices, 1 mm isotropic spacing, with masks.
inline Volume generate_synthetic(const SynthSpec& spec, std::size_t n_slices,
                                 std::vector<SynthObject>* objects = nullptr)
{
    spec.validate();
    if (n_slices == 0)
        throw std::invalid_argument("generate_synthetic: n_slices must be positive");
    Rng rng(spec.seed);
    Volume v;
    const auto n = static_cast<std::uint32_t>(spec.image_size);
    v.dims = {static_cast<std::uint32_t>(n_slices), n, n};
    v.spacing = {1.0f, 1.0f, 1.0f};
    v.intensities.reserve(v.voxel_count());
    v.mask.emplace();
    v.mask->reserve(v.voxel_count());
    for (std::size_t k = 0; k < n_slices; ++k) {
        SynthSlice s = synth_slice(spec, rng);
        v.intensities.insert(v.intensities.end(), s.image.values().begin(), s.image.values().end());
        v.mask->insert(v.mask->end(), s.mask.values().begin(), s.mask.values().end());
        if (objects)
            objects->push_back(s.object);
    }
    return v;
}

} // namespace seqpatch
