#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "seqpatch/bytes.hpp"
#include "seqpatch/errors.hpp"

namespace seqpatch {

/// Decoded single-channel PNG. Samples are widened to 16 bits; `bit_depth` is 8 or 16.
struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    int bit_depth = 8;
    std::vector<std::uint16_t> samples;
};

namespace detail {

struct PngMemReader {
    std::string_view data;
    std::size_t pos = 0;
};

inline void png_read_mem(png_structp png, png_bytep out, png_size_t n)
{
    auto* r = static_cast<PngMemReader*>(png_get_io_ptr(png));
    if (r->data.size() - r->pos < n)
        png_error(png, "truncated PNG data");
    std::memcpy(out, r->data.data() + r->pos, n);
    r->pos += n;
}

inline void png_write_mem(png_structp png, png_bytep in, png_size_t n)
{
    auto* s = static_cast<std::string*>(png_get_io_ptr(png));
    s->append(reinterpret_cast<const char*>(in), n);
}

inline void png_flush_mem(png_structp) {}

[[noreturn]] inline void png_fail(png_structp png, png_const_charp msg)
{
    auto* err = static_cast<std::string*>(png_get_error_ptr(png));
    if (err)
        *err = msg;
    png_longjmp(png, 1);
}

} // namespace detail

/// Decodes a grayscale PNG (1-16 bit). Color images are rejected.
inline GrayImage decode_png_gray(std::string_view bytes)
{
    if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
        throw DataError("not a PNG file", 0);
    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_fail, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("libpng initialization failed");
    }
    detail::PngMemReader reader{bytes, 0};
    GrayImage img;
    std::vector<png_bytep> rows;
    std::vector<std::uint8_t> buffer;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("PNG decode failed: " + err);
    }
    png_set_read_fn(png, &reader, detail::png_read_mem);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("PNG is not grayscale");
    }
    if (depth < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_strip_alpha(png);
    if (depth == 16)
        png_set_swap(png); // host little-endian samples
    png_read_update_info(png, info);
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.bit_depth = depth == 16 ? 16 : 8;
    const std::size_t stride = png_get_rowbytes(png, info);
    buffer.resize(stride * img.height);
    rows.resize(img.height);
    for (std::size_t y = 0; y < img.height; ++y)
        rows[y] = buffer.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    img.samples.resize(img.width * img.height);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) {
            const std::uint8_t* p = rows[y];
            img.samples[y * img.width + x] = img.bit_depth == 16
                                                 ? static_cast<std::uint16_t>(p[2 * x] | (p[2 * x + 1] << 8))
                                                 : p[x];
        }
    return img;
}

inline GrayImage read_png_gray(const std::string& path) { return decode_png_gray(read_file(path)); }

/// Encodes samples as an 8- or 16-bit grayscale PNG.
inline std::string encode_png_gray(const GrayImage& img)
{
    if (img.bit_depth != 8 && img.bit_depth != 16)
        throw std::invalid_argument("encode_png_gray: bit depth must be 8 or 16");
    if (img.samples.size() != img.width * img.height || img.width == 0 || img.height == 0)
        throw ShapeError("encode_png_gray: sample count does not match dimensions");
    std::string err, out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_fail, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng initialization failed");
    }
    const std::size_t bps = img.bit_depth / 8;
    std::vector<std::uint8_t> row(img.width * bps);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("PNG encode failed: " + err);
    }
    png_set_write_fn(png, &out, detail::png_write_mem, detail::png_flush_mem);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), img.bit_depth,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            const std::uint16_t v = img.samples[y * img.width + x];
            if (bps == 2) {
                row[2 * x] = static_cast<std::uint8_t>(v >> 8); // PNG stores big-endian
                row[2 * x + 1] = static_cast<std::uint8_t>(v & 0xFF);
            } else {
                row[x] = static_cast<std::uint8_t>(v);
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

/// 8-bit PNG of values in [0,1] (clamped), scaled by 255 and rounded.
inline std::string encode_unit_png(const float* values, std::size_t width, std::size_t height)
{
    GrayImage img{width, height, 8, std::vector<std::uint16_t>(width * height)};
    for (std::size_t i = 0; i < img.samples.size(); ++i) {
        const float v = std::clamp(values[i], 0.0f, 1.0f);
        img.samples[i] = static_cast<std::uint16_t>(std::lround(v * 255.0f));
    }
    return encode_png_gray(img);
}

} // namespace seqpatch
