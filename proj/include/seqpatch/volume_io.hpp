#pragma once

#include "json.hpp"

#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "seqpatch/bytes.hpp"
#include "seqpatch/png_io.hpp"
#include "seqpatch/ray_pipeline.hpp"

namespace seqpatch {

/// Image volume with an optional binary mask. Dims and spacing are ordered (D, H, W),
/// i.e. (z, y, x); voxel data is W-fastest.
struct Volume {
    std::array<std::uint32_t, 3> dims{0, 0, 0};
    std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
    std::vector<float> intensities;
    std::optional<std::vector<std::uint8_t>> mask;

    std::size_t depth() const { return dims[0]; }
    std::size_t height() const { return dims[1]; }
    std::size_t width() const { return dims[2]; }
    std::size_t slice_size() const { return height() * width(); }
    std::size_t voxel_count() const { return depth() * slice_size(); }

    void validate() const
    {
        if (intensities.size() != voxel_count())
            throw ShapeError("Volume: intensity count does not match dims");
        if (mask) {
            if (mask->size() != voxel_count())
                throw ShapeError("Volume: mask size does not match dims");
            for (auto v : *mask)
                if (v > 1)
                    throw DataError("Volume: mask values must be 0 or 1");
        }
        for (float s : spacing)
            if (!(s > 0.0f))
                throw DataError("Volume: spacing must be positive");
    }

    Image slice(std::size_t k) const
    {
        check_slice(k);
        const auto* p = intensities.data() + k * slice_size();
        return Image(Shape{height(), width()}, std::vector<float>(p, p + slice_size()));
    }

    Mask mask_slice(std::size_t k) const
    {
        check_slice(k);
        if (!mask)
            throw std::invalid_argument("Volume: no mask");
        const auto* p = mask->data() + k * slice_size();
        return Mask(Shape{height(), width()}, std::vector<std::uint8_t>(p, p + slice_size()));
    }

    void check_slice(std::size_t k) const
    {
        if (k >= depth())
            throw std::out_of_range("slice index " + std::to_string(k) + " out of range (depth "
                                    + std::to_string(depth()) + ")");
    }
};

enum class SegvDtype : std::uint8_t { f32 = 0, u8 = 1 };

inline constexpr std::size_t kSegvHeaderBytes = 4 + 1 + 1 + 12 + 12;

/// Decoded SEGV1 file; exactly one of the payload vectors is filled.
struct SegvData {
    std::array<std::uint32_t, 3> dims{};
    std::array<float, 3> spacing{};
    SegvDtype dtype = SegvDtype::f32;
    std::vector<float> f32;
    std::vector<std::uint8_t> u8;
};

namespace detail {

inline void segv_header(ByteWriter& w, const std::array<std::uint32_t, 3>& dims, const std::array<float, 3>& spacing,
                        SegvDtype dtype)
{
    w.bytes("SGV1");
    w.u8(1);
    w.u8(static_cast<std::uint8_t>(dtype));
    for (auto d : dims)
        w.u32(d);
    for (auto s : spacing)
        w.f32(s);
}

} // namespace detail

inline std::string encode_segv1(const std::array<std::uint32_t, 3>& dims, const std::array<float, 3>& spacing,
                                std::span<const float> payload)
{
    if (payload.size() != std::size_t{dims[0]} * dims[1] * dims[2])
        throw ShapeError("encode_segv1: payload size does not match dims");
    ByteWriter w;
    detail::segv_header(w, dims, spacing, SegvDtype::f32);
    for (float v : payload)
        w.f32(v);
    return w.take();
}

inline std::string encode_segv1(const std::array<std::uint32_t, 3>& dims, const std::array<float, 3>& spacing,
                                std::span<const std::uint8_t> payload)
{
    if (payload.size() != std::size_t{dims[0]} * dims[1] * dims[2])
        throw ShapeError("encode_segv1: payload size does not match dims");
    ByteWriter w;
    detail::segv_header(w, dims, spacing, SegvDtype::u8);
    w.bytes(std::string_view(reinterpret_cast<const char*>(payload.data()), payload.size()));
    return w.take();
}

inline SegvData decode_segv1(std::string_view bytes)
{
    ByteReader r(bytes);
    if (r.bytes(4) != "SGV1")
        throw DataError("SEGV1: bad magic", 0);
    if (const auto v = r.u8(); v != 1)
        throw DataError("SEGV1: unsupported version " + std::to_string(v), 4);
    SegvData d;
    const auto dt = r.u8();
    if (dt > 1)
        throw DataError("SEGV1: unknown dtype " + std::to_string(dt), 5);
    d.dtype = static_cast<SegvDtype>(dt);
    for (auto& x : d.dims)
        x = r.u32();
    for (auto& s : d.spacing)
        s = r.f32();
    const std::uint64_t n = std::uint64_t{d.dims[0]} * d.dims[1] * d.dims[2];
    const std::uint64_t need = n * (d.dtype == SegvDtype::f32 ? 4 : 1);
    if (r.remaining() != need)
        throw DataError("SEGV1: payload has " + std::to_string(r.remaining()) + " bytes, expected "
                            + std::to_string(need),
                        kSegvHeaderBytes + std::min<std::uint64_t>(r.remaining(), need));
    if (d.dtype == SegvDtype::f32) {
        d.f32.resize(n);
        for (auto& v : d.f32)
            v = r.f32();
    } else {
        const auto raw = r.bytes(n);
        d.u8.assign(raw.begin(), raw.end());
    }
    return d;
}

inline void save_intensities(const Volume& v, const std::string& path)
{
    write_file(path, encode_segv1(v.dims, v.spacing, std::span<const float>(v.intensities)));
}

inline void save_mask(const Volume& v, const std::string& path)
{
    if (!v.mask)
        throw std::invalid_argument("save_mask: volume has no mask");
    write_file(path, encode_segv1(v.dims, v.spacing, std::span<const std::uint8_t>(*v.mask)));
}

/// Reads an f32 intensity file and, optionally, a u8 mask file with the same dims.
inline Volume load_volume(const std::string& path, const std::optional<std::string>& mask_path = std::nullopt)
{
    SegvData d = decode_segv1(read_file(path));
    if (d.dtype != SegvDtype::f32)
        throw DataError(path + ": expected f32 intensities", 5);
    Volume v;
    v.dims = d.dims;
    v.spacing = d.spacing;
    v.intensities = std::move(d.f32);
    if (mask_path) {
        SegvData m = decode_segv1(read_file(*mask_path));
        if (m.dtype != SegvDtype::u8)
            throw DataError(*mask_path + ": expected u8 mask", 5);
        if (m.dims != v.dims)
            throw DataError(*mask_path + ": mask dims differ from volume", 6);
        for (std::size_t i = 0; i < m.u8.size(); ++i)
            if (m.u8[i] > 1)
                throw DataError(*mask_path + ": mask value not in {0,1}", kSegvHeaderBytes + i);
        v.mask = std::move(m.u8);
    }
    v.validate();
    return v;
}

/// Loads a 2-D mask (a depth-1 u8 SEGV1 file) or a whole u8 volume.
inline SegvData load_mask_file(const std::string& path)
{
    SegvData m = decode_segv1(read_file(path));
    if (m.dtype != SegvDtype::u8)
        throw DataError(path + ": expected u8 mask", 5);
    return m;
}

/// Builds a volume from a directory of equally sized grayscale PNGs in lexicographic order.
/// Intensities are sample / (2^bit_depth - 1).
inline Volume ingest_png_stack(const std::string& directory, std::array<float, 3> spacing)
{
    namespace fs = std::filesystem;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(directory))
        if (e.is_regular_file() && e.path().extension() == ".png")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty())
        throw DataError("ingest_png_stack: no PNG files in " + directory);
    Volume v;
    v.spacing = spacing;
    for (const auto& f : files) {
        const GrayImage img = read_png_gray(f.string());
        if (v.intensities.empty()) {
            v.dims[1] = static_cast<std::uint32_t>(img.height);
            v.dims[2] = static_cast<std::uint32_t>(img.width);
        } else if (img.height != v.height() || img.width != v.width()) {
            throw DataError("ingest_png_stack: " + f.filename().string() + " is " + std::to_string(img.width) + "x"
                            + std::to_string(img.height) + ", expected " + std::to_string(v.width()) + "x"
                            + std::to_string(v.height()));
        }
        const float scale = img.bit_depth == 16 ? 65535.0f : 255.0f;
        for (auto s : img.samples)
            v.intensities.push_back(static_cast<float>(s) / scale);
        ++v.dims[0];
    }
    v.validate();
    return v;
}

/// Bilinear resampling of every slice to the target in-plane spacing (y, x). Sample
/// positions are aligned at pixel 0; masks are resampled bilinearly and thresholded at 0.5.
inline Volume resample_inplane(const Volume& v, float target_y, float target_x)
{
    if (!(target_y > 0.0f) || !(target_x > 0.0f))
        throw std::invalid_argument("resample_inplane: target spacing must be positive");
    const auto nh = static_cast<std::uint32_t>(
        std::max(1L, std::lround(static_cast<double>(v.height()) * v.spacing[1] / target_y)));
    const auto nw = static_cast<std::uint32_t>(
        std::max(1L, std::lround(static_cast<double>(v.width()) * v.spacing[2] / target_x)));
    Volume out;
    out.dims = {v.dims[0], nh, nw};
    out.spacing = {v.spacing[0], target_y, target_x};
    out.intensities.resize(out.voxel_count());
    if (v.mask)
        out.mask.emplace(out.voxel_count());
    const double fy = static_cast<double>(target_y) / v.spacing[1];
    const double fx = static_cast<double>(target_x) / v.spacing[2];
    auto sample = [&](auto get, std::size_t k, std::size_t y, std::size_t x) {
        const double sy = std::min(y * fy, static_cast<double>(v.height() - 1));
        const double sx = std::min(x * fx, static_cast<double>(v.width() - 1));
        const auto y0 = static_cast<std::size_t>(sy), x0 = static_cast<std::size_t>(sx);
        const std::size_t y1 = std::min(y0 + 1, v.height() - 1), x1 = std::min(x0 + 1, v.width() - 1);
        const double ay = sy - y0, ax = sx - x0;
        const std::size_t base = k * v.slice_size();
        auto at = [&](std::size_t yy, std::size_t xx) { return static_cast<double>(get(base + yy * v.width() + xx)); };
        return (1 - ay) * ((1 - ax) * at(y0, x0) + ax * at(y0, x1)) + ay * ((1 - ax) * at(y1, x0) + ax * at(y1, x1));
    };
    for (std::size_t k = 0; k < v.depth(); ++k)
        for (std::size_t y = 0; y < nh; ++y)
            for (std::size_t x = 0; x < nw; ++x) {
                const std::size_t o = k * out.slice_size() + y * nw + x;
                out.intensities[o] = static_cast<float>(sample([&](std::size_t i) { return v.intensities[i]; }, k, y, x));
                if (v.mask)
                    (*out.mask)[o] = sample([&](std::size_t i) { return (*v.mask)[i]; }, k, y, x) >= 0.5 ? 1 : 0;
            }
    return out;
}

struct ManifestEntry {
    std::string id;
    std::string volume_path;
    std::optional<std::string> mask_path;
    std::string split = "train";
    std::map<std::size_t, Point> center_overrides;
};

/// Dataset listing. Relative paths are resolved against the manifest's directory.
struct Manifest {
    std::vector<ManifestEntry> entries;

    std::vector<const ManifestEntry*> split(const std::string& name) const
    {
        std::vector<const ManifestEntry*> out;
        for (const auto& e : entries)
            if (e.split == name)
                out.push_back(&e);
        return out;
    }

    const ManifestEntry* find(const std::string& id) const
    {
        for (const auto& e : entries)
            if (e.id == id)
                return &e;
        return nullptr;
    }

    Volume load(const ManifestEntry& e) const { return load_volume(e.volume_path, e.mask_path); }
};

inline nlohmann::json to_json(const Manifest& m, const std::filesystem::path& base = {})
{
    nlohmann::json vols = nlohmann::json::array();
    auto rel = [&](const std::string& p) {
        return base.empty() ? p : std::filesystem::relative(p, base).generic_string();
    };
    for (const auto& e : m.entries) {
        nlohmann::json j{{"id", e.id}, {"volume_path", rel(e.volume_path)}, {"split", e.split}};
        if (e.mask_path)
            j["mask_path"] = rel(*e.mask_path);
        if (!e.center_overrides.empty()) {
            nlohmann::json c = nlohmann::json::object();
            for (const auto& [k, p] : e.center_overrides)
                c[std::to_string(k)] = {p.x, p.y};
            j["center_overrides"] = c;
        }
        vols.push_back(j);
    }
    return {{"volumes", vols}};
}

inline Manifest parse_manifest(const nlohmann::json& j, const std::filesystem::path& base)
{
    Manifest m;
    std::set<std::string> ids;
    std::map<std::string, std::string> split_of_path;
    auto resolve = [&](const std::string& p) {
        std::filesystem::path path(p);
        return (path.is_absolute() ? path : base / path).lexically_normal().string();
    };
    try {
        for (const auto& v : j.at("volumes")) {
            ManifestEntry e;
            e.volume_path = resolve(v.at("volume_path").get<std::string>());
            e.id = v.value("id", std::filesystem::path(e.volume_path).stem().string());
            if (v.contains("mask_path"))
                e.mask_path = resolve(v.at("mask_path").get<std::string>());
            e.split = v.value("split", std::string("train"));
            if (e.split != "train" && e.split != "test")
                throw DataError("manifest: split must be train or test, got '" + e.split + "'");
            if (v.contains("center_overrides"))
                for (const auto& [k, xy] : v.at("center_overrides").items())
                    e.center_overrides[std::stoul(k)] = {xy.at(0).get<int>(), xy.at(1).get<int>()};
            if (!ids.insert(e.id).second)
                throw DataError("manifest: duplicate id '" + e.id + "'");
            auto [it, fresh] = split_of_path.emplace(e.volume_path, e.split);
            if (!fresh && it->second != e.split)
                throw DataError("manifest: " + e.volume_path + " appears in both splits");
            if (!std::filesystem::exists(e.volume_path))
                throw DataError("manifest: missing volume " + e.volume_path);
            if (e.mask_path && !std::filesystem::exists(*e.mask_path))
                throw DataError("manifest: missing mask " + *e.mask_path);
            m.entries.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("manifest: ") + ex.what());
    }
    return m;
}

inline Manifest load_manifest(const std::string& path)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& ex) {
        throw DataError("manifest " + path + ": " + ex.what());
    }
    return parse_manifest(j, std::filesystem::path(path).parent_path());
}

} // namespace seqpatch
