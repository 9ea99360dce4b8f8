#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "seqpatch/errors.hpp"

namespace seqpatch {

/// Row-major run lengths alternating background, foreground, ... and always starting with
/// a background run (zero when the first pixel is foreground).
inline std::vector<std::uint32_t> rle_encode(std::span<const std::uint8_t> mask)
{
    std::vector<std::uint32_t> runs;
    std::uint8_t current = 0;
    std::uint32_t n = 0;
    for (std::uint8_t v : mask) {
        const std::uint8_t bit = v ? 1 : 0;
        if (bit != current) {
            runs.push_back(n);
            current = bit;
            n = 0;
        }
        ++n;
    }
    runs.push_back(n);
    return runs;
}

inline std::vector<std::uint8_t> rle_decode(std::span<const std::uint32_t> runs, std::size_t expected_size)
{
    std::vector<std::uint8_t> out;
    out.reserve(expected_size);
    std::uint8_t bit = 0;
    for (auto r : runs) {
        if (out.size() + r > expected_size)
            throw DataError("rle: runs exceed " + std::to_string(expected_size) + " pixels");
        out.insert(out.end(), r, bit);
        bit ^= 1;
    }
    if (out.size() != expected_size)
        throw DataError("rle: runs cover " + std::to_string(out.size()) + " of " + std::to_string(expected_size)
                        + " pixels");
    return out;
}

namespace detail {
inline constexpr std::string_view kBase64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

inline std::string base64_encode(std::string_view in)
{
    std::string out;
    out.reserve((in.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < in.size(); i += 3) {
        const std::uint32_t v = (std::uint8_t(in[i]) << 16) | (std::uint8_t(in[i + 1]) << 8) | std::uint8_t(in[i + 2]);
        for (int s = 18; s >= 0; s -= 6)
            out.push_back(detail::kBase64[(v >> s) & 63]);
    }
    if (const std::size_t rest = in.size() - i; rest > 0) {
        std::uint32_t v = std::uint8_t(in[i]) << 16;
        if (rest == 2)
            v |= std::uint8_t(in[i + 1]) << 8;
        out.push_back(detail::kBase64[(v >> 18) & 63]);
        out.push_back(detail::kBase64[(v >> 12) & 63]);
        out.push_back(rest == 2 ? detail::kBase64[(v >> 6) & 63] : '=');
        out.push_back('=');
    }
    return out;
}

inline std::string base64_decode(std::string_view in)
{
    if (in.size() % 4 != 0)
        throw DataError("base64: length is not a multiple of 4");
    std::string out;
    std::uint32_t acc = 0;
    int bits = 0;
    for (std::size_t i = 0; i < in.size(); ++i) {
        const char c = in[i];
        if (c == '=') {
            if (i + 2 < in.size() || (i + 1 < in.size() && in[i + 1] != '='))
                throw DataError("base64: misplaced padding");
            break;
        }
        const auto pos = detail::kBase64.find(c);
        if (pos == std::string_view::npos)
            throw DataError("base64: invalid character");
        acc = (acc << 6) | static_cast<std::uint32_t>(pos);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<char>((acc >> bits) & 0xFF));
        }
    }
    return out;
}

} // namespace seqpatch
