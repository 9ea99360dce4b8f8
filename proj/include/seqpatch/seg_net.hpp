#pragma once

#include "json.hpp"

#include <optional>
#include <string>
#include <vector>

#include "seqpatch/bytes.hpp"
#include "seqpatch/convrnn.hpp"

namespace seqpatch {

struct RnnLevels {
    bool bottom = true;
    bool middle = true;
    bool top = true;

    bool any() const noexcept { return bottom || middle || top; }
    bool operator==(const RnnLevels&) const = default;
};

/// Three-level encoder/decoder over 32x32 patches. Level widths are base, 2*base, 4*base.
struct NetConfig {
    std::string variant = "full";
    std::size_t base_channels = 16;
    std::size_t patch_size = 32;
    RnnLevels rnn_levels;
    bool bidirectional = true;

    std::size_t width(int level) const { return base_channels << level; }

    void validate() const
    {
        if (base_channels == 0)
            throw std::invalid_argument("NetConfig: base_channels must be positive");
        if (patch_size == 0 || patch_size % 4 != 0)
            throw std::invalid_argument("NetConfig: patch_size must be a positive multiple of 4");
    }

    bool operator==(const NetConfig&) const = default;
};

inline nlohmann::json to_json(const NetConfig& c)
{
    nlohmann::json levels = nlohmann::json::array();
    if (c.rnn_levels.bottom)
        levels.push_back("bottom");
    if (c.rnn_levels.middle)
        levels.push_back("middle");
    if (c.rnn_levels.top)
        levels.push_back("top");
    return {{"variant", c.variant},
            {"base_channels", c.base_channels},
            {"patch_size", c.patch_size},
            {"rnn_levels", levels},
            {"bidirectional", c.bidirectional}};
}

inline NetConfig net_config_from_json(const nlohmann::json& j)
{
    NetConfig c;
    c.variant = j.value("variant", c.variant);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.bidirectional = j.value("bidirectional", c.bidirectional);
    if (j.contains("rnn_levels")) {
        c.rnn_levels = {false, false, false};
        for (const auto& l : j.at("rnn_levels")) {
            const auto s = l.get<std::string>();
            if (s == "bottom")
                c.rnn_levels.bottom = true;
            else if (s == "middle")
                c.rnn_levels.middle = true;
            else if (s == "top")
                c.rnn_levels.top = true;
            else
                throw std::invalid_argument("unknown rnn level '" + s + "'");
        }
    }
    c.validate();
    return c;
}

/// Ablation variants: full, single_direction, bottom_only (U-net-B), bottom_middle (U-net-BM).
inline NetConfig build_variant(const std::string& name, std::size_t base_channels = 16)
{
    NetConfig c;
    c.variant = name;
    c.base_channels = base_channels;
    if (name == "full") {
    } else if (name == "single_direction") {
        c.bidirectional = false;
    } else if (name == "bottom_only") {
        c.rnn_levels = {true, false, false};
    } else if (name == "bottom_middle") {
        c.rnn_levels = {true, true, false};
    } else {
        throw std::invalid_argument("unknown variant '" + name
                                    + "' (expected full, single_direction, bottom_only, bottom_middle)");
    }
    c.validate();
    return c;
}

template <typename T>
struct ConvLayer {
    Tensor<T> w;
    Tensor<T> b;
};

/// Recurrent memory at one decoder level: a bidirectional block or a single forward unit.
template <typename T>
struct MemoryLevel {
    std::optional<BiDirectionalBlock<T>> bi;
    std::optional<GatedUnitParams<T>> uni;

    bool enabled() const { return bi || uni; }

    std::vector<Tensor<T>> run(const std::vector<Tensor<T>>& steps) const
    {
        return bi ? run_bidirectional(steps, *bi) : run_forward(steps, *uni);
    }

    void append_to(NamedTensors<T>& out, const std::string& prefix) const
    {
        if (bi)
            bi->append_to(out, prefix);
        else if (uni)
            uni->append_to(out, prefix + ".fwd");
    }
};

/// Channel counts feeding the recurrent blocks at each level.
struct LevelChannels {
    std::size_t bottom, middle, top;
};

inline LevelChannels memory_channels(const NetConfig& c)
{
    return {c.width(2), 2 * c.width(1), 2 * c.width(0)};
}

template <typename T>
struct ModelParams {
    static constexpr std::uint16_t kVersion = 1;

    NetConfig config;
    ConvLayer<T> enc1a, enc1b, enc2a, enc2b, enc3a, enc3b;
    MemoryLevel<T> bottom, middle, top;
    ConvLayer<T> up2, up1, head;

    static ModelParams create(const NetConfig& cfg, std::uint64_t seed)
    {
        cfg.validate();
        Rng rng(seed);
        ModelParams p;
        p.config = cfg;
        const std::size_t w0 = cfg.width(0), w1 = cfg.width(1), w2 = cfg.width(2);
        auto conv = [&](std::size_t in, std::size_t out, std::size_t k) {
            return ConvLayer<T>{fan_in_uniform<T>({out, in, k, k}, in * k * k, rng), Tensor<T>::zeros({out}, true)};
        };
        auto memory = [&](bool on, std::size_t ch) {
            MemoryLevel<T> m;
            if (!on)
                return m;
            if (cfg.bidirectional)
                m.bi = BiDirectionalBlock<T>::random(ch, rng);
            else
                m.uni = GatedUnitParams<T>::random(ch, rng);
            return m;
        };
        const auto mc = memory_channels(cfg);
        p.enc1a = conv(1, w0, 3);
        p.enc1b = conv(w0, w0, 3);
        p.enc2a = conv(w0, w1, 3);
        p.enc2b = conv(w1, w1, 3);
        p.enc3a = conv(w1, w2, 3);
        p.enc3b = conv(w2, w2, 3);
        p.bottom = memory(cfg.rnn_levels.bottom, mc.bottom);
        p.up2 = {fan_in_uniform<T>({w2, w1, 2, 2}, w2, rng), Tensor<T>::zeros({w1}, true)};
        p.middle = memory(cfg.rnn_levels.middle, mc.middle);
        p.up1 = {fan_in_uniform<T>({2 * w1, w0, 2, 2}, 2 * w1, rng), Tensor<T>::zeros({w0}, true)};
        p.top = memory(cfg.rnn_levels.top, mc.top);
        p.head = conv(2 * w0, 1, 1);
        return p;
    }

    /// All learnable tensors in serialization order.
    NamedTensors<T> named_parameters() const
    {
        NamedTensors<T> out;
        auto add = [&](const std::string& n, const ConvLayer<T>& l) {
            out.emplace_back(n + ".w", l.w);
            out.emplace_back(n + ".b", l.b);
        };
        add("enc1a", enc1a);
        add("enc1b", enc1b);
        add("enc2a", enc2a);
        add("enc2b", enc2b);
        add("enc3a", enc3a);
        add("enc3b", enc3b);
        bottom.append_to(out, "rnn_bottom");
        add("up2", up2);
        middle.append_to(out, "rnn_middle");
        add("up1", up1);
        top.append_to(out, "rnn_top");
        add("head", head);
        return out;
    }

    std::vector<Tensor<T>> parameters() const
    {
        std::vector<Tensor<T>> out;
        for (auto& [name, t] : named_parameters())
            out.push_back(t);
        return out;
    }

    void zero_grad() const
    {
        for (auto& [name, t] : named_parameters())
            Tensor<T>(t).zero_grad();
    }

    /// Deep copy in another precision; the copy's tensors are fresh leaves.
    template <typename U>
    ModelParams<U> cast() const
    {
        ModelParams<U> out = ModelParams<U>::create(config, 0);
        auto src = named_parameters();
        auto dst = out.named_parameters();
        for (std::size_t i = 0; i < src.size(); ++i)
            dst[i].second.mutable_value() = src[i].second.value().template cast<U>();
        return out;
    }
};

namespace detail {

template <typename T>
std::vector<Tensor<T>> split_steps(const Tensor<T>& x, std::size_t steps)
{
    const std::size_t batch = x.dim(0) / steps;
    std::vector<Tensor<T>> out;
    out.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t)
        out.push_back(slice(x, 0, t * batch, (t + 1) * batch));
    return out;
}

template <typename T>
Tensor<T> apply_memory(const MemoryLevel<T>& level, const Tensor<T>& x, std::size_t steps)
{
    if (!level.enabled())
        return x;
    return concat(level.run(split_steps(x, steps)), 0);
}

inline void expect_channels(const Shape& s, std::size_t c, std::size_t hw, const char* where)
{
    if (s.size() != 4 || s[1] != c || s[2] != hw || s[3] != hw)
        throw ShapeError(std::string("seg_net junction ") + where + ": got " + shape_str(s) + ", expected [N,"
                         + std::to_string(c) + "," + std::to_string(hw) + "," + std::to_string(hw) + "]");
}

} // namespace detail

/// Runs a batch of R sequences of length `seq_len` through the network.
/// `patches` is [seq_len * R, 1, S, S] in time-major order (index t*R + r); the result has
/// the same layout with per-pixel foreground probabilities.
template <typename T>
Tensor<T> forward_batch(const ModelParams<T>& p, const Tensor<T>& patches, std::size_t seq_len)
{
    const auto& cfg = p.config;
    const std::size_t s = cfg.patch_size;
    if (patches.ndim() != 4 || patches.dim(1) != 1 || patches.dim(2) != s || patches.dim(3) != s)
        throw ShapeError("forward_batch: expected [K*R,1," + std::to_string(s) + "," + std::to_string(s) + "], got "
                         + shape_str(patches.shape()));
    if (seq_len == 0 || patches.dim(0) % seq_len != 0)
        throw ShapeError("forward_batch: batch " + std::to_string(patches.dim(0)) + " is not a multiple of seq_len "
                         + std::to_string(seq_len));
    const std::size_t w0 = cfg.width(0), w1 = cfg.width(1), w2 = cfg.width(2);
    auto block = [](const Tensor<T>& x, const ConvLayer<T>& a, const ConvLayer<T>& b) {
        return relu(conv2d(relu(conv2d(x, a.w, a.b)), b.w, b.b));
    };
    const Tensor<T> c1 = block(patches, p.enc1a, p.enc1b);
    const Tensor<T> c2 = block(maxpool2(c1), p.enc2a, p.enc2b);
    const Tensor<T> c3 = block(maxpool2(c2), p.enc3a, p.enc3b);
    detail::expect_channels(c3.shape(), w2, s / 4, "bottom");

    const Tensor<T> m3 = detail::apply_memory(p.bottom, c3, seq_len);
    const Tensor<T> u2 = relu(deconv2(m3, p.up2.w, p.up2.b));
    detail::expect_channels(u2.shape(), w1, s / 2, "middle skip");
    detail::expect_channels(c2.shape(), w1, s / 2, "middle skip");
    const Tensor<T> m2 = detail::apply_memory(p.middle, concat<T>({u2, c2}, 1), seq_len);

    const Tensor<T> u1 = relu(deconv2(m2, p.up1.w, p.up1.b));
    detail::expect_channels(u1.shape(), w0, s, "top skip");
    detail::expect_channels(c1.shape(), w0, s, "top skip");
    const Tensor<T> m1 = detail::apply_memory(p.top, concat<T>({u1, c1}, 1), seq_len);
    return sigmoid(conv2d(m1, p.head.w, p.head.b));
}

/// One sequence of K patches, each [S,S]. Returns [K,1,S,S] probabilities.
template <typename T>
Tensor<T> forward_sequence(const ModelParams<T>& p, const std::vector<Array<T>>& patches)
{
    if (patches.empty())
        throw std::invalid_argument("forward_sequence: empty sequence");
    const std::size_t s = p.config.patch_size;
    Array<T> batch(Shape{patches.size(), 1, s, s});
    for (std::size_t t = 0; t < patches.size(); ++t) {
        if (patches[t].shape() != Shape{s, s})
            throw ShapeError("forward_sequence: patch " + std::to_string(t) + " has shape "
                             + shape_str(patches[t].shape()) + ", expected [" + std::to_string(s) + ","
                             + std::to_string(s) + "]");
        std::copy_n(patches[t].data(), s * s, batch.data() + t * s * s);
    }
    return forward_batch(p, Tensor<T>(std::move(batch)), patches.size());
}

/// Closed-form parameter count for a configuration.
inline std::size_t analytic_parameter_count(const NetConfig& c)
{
    const std::size_t w0 = c.width(0), w1 = c.width(1), w2 = c.width(2);
    std::size_t n = 9 * (w0 + w0 * w0 + w0 * w1 + w1 * w1 + w1 * w2 + w2 * w2) + 2 * (w0 + w1 + w2);
    n += 4 * w2 * w1 + w1;         // up2
    n += 4 * 2 * w1 * w0 + w0;     // up1
    n += 2 * w0 + 1;               // head
    auto unit = [](std::size_t p) { return 36 * p * p + 2 * p; };
    auto memory = [&](bool on, std::size_t p) -> std::size_t {
        if (!on)
            return 0;
        return c.bidirectional ? 2 * unit(p) + 2 * p * p + p : unit(p);
    };
    const auto mc = memory_channels(c);
    return n + memory(c.rnn_levels.bottom, mc.bottom) + memory(c.rnn_levels.middle, mc.middle)
           + memory(c.rnn_levels.top, mc.top);
}

// Checkpoint layout (little-endian):
//   "RPSM" | u16 version | u32 config length | config JSON
//   then per parameter: u32 name length | name | u32 element count | f32 x count
inline std::string serialize_checkpoint(const ModelParams<float>& p)
{
    ByteWriter w;
    w.bytes("RPSM");
    w.u16(ModelParams<float>::kVersion);
    const std::string cfg = to_json(p.config).dump();
    w.u32(static_cast<std::uint32_t>(cfg.size()));
    w.bytes(cfg);
    for (const auto& [name, t] : p.named_parameters()) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.bytes(name);
        w.u32(static_cast<std::uint32_t>(t.size()));
        for (float v : t.value().values())
            w.f32(v);
    }
    return w.take();
}

inline ModelParams<float> deserialize_checkpoint(std::string_view bytes)
{
    ByteReader r(bytes);
    if (r.bytes(4) != "RPSM")
        throw DataError("checkpoint: bad magic", 0);
    const auto version = r.u16();
    if (version != ModelParams<float>::kVersion)
        throw DataError("checkpoint: unsupported version " + std::to_string(version), 4);
    const auto cfg_len = r.u32();
    const auto cfg_off = r.offset();
    NetConfig cfg;
    try {
        cfg = net_config_from_json(nlohmann::json::parse(r.bytes(cfg_len)));
    } catch (const DataError&) {
        throw;
    } catch (const std::exception& e) {
        throw DataError(std::string("checkpoint: bad config block: ") + e.what(), cfg_off);
    }
    auto params = ModelParams<float>::create(cfg, 0);
    for (auto& [name, t] : params.named_parameters()) {
        const auto off = r.offset();
        const auto len = r.u32();
        const auto got = r.bytes(len);
        if (got != name)
            throw DataError("checkpoint: expected parameter '" + name + "', found '" + std::string(got) + "'", off);
        const auto count = r.u32();
        if (count != t.size())
            throw DataError("checkpoint: parameter '" + name + "' has " + std::to_string(count) + " elements, expected "
                                + std::to_string(t.size()),
                            off);
        auto& v = t.mutable_value();
        for (std::size_t i = 0; i < count; ++i)
            v[i] = r.f32();
    }
    if (!r.done())
        throw DataError("checkpoint: trailing bytes", r.offset());
    return params;
}

inline void save_checkpoint(const ModelParams<float>& p, const std::string& path)
{
    write_file(path, serialize_checkpoint(p));
}

inline ModelParams<float> load_checkpoint(const std::string& path)
{
    return deserialize_checkpoint(read_file(path));
}

struct ParamReport {
    std::size_t parameter_count = 0;
    std::size_t serialized_bytes = 0;
};

inline ParamReport param_report(const ModelParams<float>& p)
{
    ParamReport r;
    for (const auto& [name, t] : p.named_parameters())
        r.parameter_count += t.size();
    r.serialized_bytes = serialize_checkpoint(p).size();
    return r;
}

} // namespace seqpatch
