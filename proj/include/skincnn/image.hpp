#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "skincnn/common.hpp"
#include "skincnn/tensor.hpp"

namespace skincnn {

using Bytes = std::vector<std::uint8_t>;

// 8-bit interleaved RGB, row-major.
struct RgbImage {
    std::size_t height = 0, width = 0;
    Bytes pixels; // height * width * 3

    std::uint8_t& at(std::size_t r, std::size_t c, std::size_t ch)
    {
        return pixels[(r * width + c) * 3 + ch];
    }
    std::uint8_t at(std::size_t r, std::size_t c, std::size_t ch) const
    {
        return pixels[(r * width + c) * 3 + ch];
    }
};

struct GrayImage {
    std::size_t height = 0, width = 0;
    Bytes pixels; // height * width
};

// Planar CHW float image, 3 channels.
struct FloatImage {
    std::size_t height = 0, width = 0;
    std::vector<float> values; // 3 * height * width
};

struct BinaryMask {
    std::size_t height = 0, width = 0;
    Bytes on; // height * width of 0/1

    bool at(std::size_t r, std::size_t c) const { return on[r * width + c] != 0; }
    void set(std::size_t r, std::size_t c, bool v) { on[r * width + c] = v ? 1 : 0; }
    std::size_t count() const
    {
        std::size_t n = 0;
        for (auto v : on)
            n += v != 0;
        return n;
    }
};

inline Bytes read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    SKINCNN_CHECK(in, "cannot open file: ", path);
    Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return data;
}

inline void write_file(const std::string& path, const Bytes& data)
{
    std::ofstream out(path, std::ios::binary);
    SKINCNN_CHECK(out, "cannot open file for writing: ", path);
    out.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size()));
    SKINCNN_CHECK(out, "write failed: ", path);
}

namespace detail {

struct RawImage {
    std::size_t height = 0, width = 0, channels = 0;
    Bytes pixels; // interleaved
};

inline std::uint32_t read_be32(const std::uint8_t* p)
{
    return std::uint32_t(p[0]) << 24 | std::uint32_t(p[1]) << 16 | std::uint32_t(p[2]) << 8 |
           std::uint32_t(p[3]);
}

inline void push_be32(Bytes& out, std::uint32_t v)
{
    out.push_back(std::uint8_t(v >> 24));
    out.push_back(std::uint8_t(v >> 16));
    out.push_back(std::uint8_t(v >> 8));
    out.push_back(std::uint8_t(v));
}

inline const std::uint8_t kPngSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

inline bool is_png(const Bytes& data)
{
    return data.size() >= 8 && std::memcmp(data.data(), kPngSig, 8) == 0;
}

inline std::uint8_t paeth(std::uint8_t a, std::uint8_t b, std::uint8_t c)
{
    const int p = int(a) + int(b) - int(c);
    const int pa = std::abs(p - int(a)), pb = std::abs(p - int(b)), pc = std::abs(p - int(c));
    if (pa <= pb && pa <= pc)
        return a;
    return pb <= pc ? b : c;
}

inline RawImage decode_png(const Bytes& data)
{
    SKINCNN_CHECK(is_png(data), "png: bad signature");
    std::size_t pos = 8;
    bool seen_ihdr = false, seen_iend = false;
    std::size_t w = 0, h = 0, channels = 0;
    Bytes idat;
    while (pos + 12 <= data.size() && !seen_iend) {
        const std::uint32_t len = read_be32(data.data() + pos);
        SKINCNN_CHECK(pos + 12 + len <= data.size(), "png: truncated chunk");
        const char* type = reinterpret_cast<const char*>(data.data() + pos + 4);
        const std::uint8_t* payload = data.data() + pos + 8;
        const std::uint32_t stored_crc = read_be32(payload + len);
        std::uint32_t crc = std::uint32_t(crc32(0L, data.data() + pos + 4, len + 4));
        SKINCNN_CHECK(crc == stored_crc, "png: crc mismatch in ", std::string(type, 4), " chunk");
        if (std::memcmp(type, "IHDR", 4) == 0) {
            SKINCNN_CHECK(len == 13, "png: bad IHDR length");
            w = read_be32(payload);
            h = read_be32(payload + 4);
            const std::uint8_t depth = payload[8], color = payload[9], interlace = payload[12];
            SKINCNN_CHECK(depth == 8, "png: unsupported bit depth ", int(depth));
            SKINCNN_CHECK(color == 0 || color == 2 || color == 4 || color == 6,
                          "png: unsupported color type ", int(color));
            SKINCNN_CHECK(interlace == 0, "png: interlaced images unsupported");
            channels = color == 0 ? 1 : color == 2 ? 3 : color == 4 ? 2 : 4;
            seen_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            seen_iend = true;
        }
        pos += 12 + len;
    }
    SKINCNN_CHECK(seen_ihdr && seen_iend, "png: missing IHDR or IEND");
    SKINCNN_CHECK(w > 0 && h > 0, "png: zero dimensions");

    const std::size_t stride = w * channels;
    Bytes raster(h * (stride + 1));
    uLongf raster_len = uLongf(raster.size());
    const int zret = uncompress(raster.data(), &raster_len, idat.data(), uLong(idat.size()));
    SKINCNN_CHECK(zret == Z_OK && raster_len == raster.size(), "png: inflate failed");

    RawImage img{h, w, channels, Bytes(h * stride)};
    const std::size_t bpp = channels;
    std::vector<std::uint8_t> prior(stride, 0);
    for (std::size_t r = 0; r < h; ++r) {
        const std::uint8_t filter = raster[r * (stride + 1)];
        const std::uint8_t* src = raster.data() + r * (stride + 1) + 1;
        std::uint8_t* dst = img.pixels.data() + r * stride;
        switch (filter) {
        case 0:
            std::memcpy(dst, src, stride);
            break;
        case 1:
            for (std::size_t x = 0; x < stride; ++x)
                dst[x] = std::uint8_t(src[x] + (x >= bpp ? dst[x - bpp] : 0));
            break;
        case 2:
            for (std::size_t x = 0; x < stride; ++x)
                dst[x] = std::uint8_t(src[x] + prior[x]);
            break;
        case 3:
            for (std::size_t x = 0; x < stride; ++x) {
                const int left = x >= bpp ? dst[x - bpp] : 0;
                dst[x] = std::uint8_t(src[x] + (left + prior[x]) / 2);
            }
            break;
        case 4:
            for (std::size_t x = 0; x < stride; ++x) {
                const std::uint8_t a = x >= bpp ? dst[x - bpp] : 0;
                const std::uint8_t c = x >= bpp ? prior[x - bpp] : 0;
                dst[x] = std::uint8_t(src[x] + paeth(a, prior[x], c));
            }
            break;
        default:
            SKINCNN_CHECK(false, "png: unknown filter ", int(filter));
        }
        std::memcpy(prior.data(), dst, stride);
    }
    return img;
}

inline Bytes encode_png(const RawImage& img)
{
    const std::size_t stride = img.width * img.channels;
    Bytes raster(img.height * (stride + 1));
    for (std::size_t r = 0; r < img.height; ++r) {
        raster[r * (stride + 1)] = 0; // filter: none
        std::memcpy(raster.data() + r * (stride + 1) + 1, img.pixels.data() + r * stride, stride);
    }
    Bytes compressed(compressBound(uLong(raster.size())));
    uLongf clen = uLongf(compressed.size());
    const int zret =
        compress2(compressed.data(), &clen, raster.data(), uLong(raster.size()), Z_DEFAULT_COMPRESSION);
    SKINCNN_CHECK(zret == Z_OK, "png: deflate failed");
    compressed.resize(clen);

    Bytes out(kPngSig, kPngSig + 8);
    auto chunk = [&out](const char* type, const Bytes& payload) {
        push_be32(out, std::uint32_t(payload.size()));
        const std::size_t type_at = out.size();
        out.insert(out.end(), type, type + 4);
        out.insert(out.end(), payload.begin(), payload.end());
        const std::uint32_t crc =
            std::uint32_t(crc32(0L, out.data() + type_at, uInt(4 + payload.size())));
        push_be32(out, crc);
    };
    Bytes ihdr;
    push_be32(ihdr, std::uint32_t(img.width));
    push_be32(ihdr, std::uint32_t(img.height));
    ihdr.push_back(8); // bit depth
    ihdr.push_back(img.channels == 1 ? 0 : img.channels == 2 ? 4 : img.channels == 3 ? 2 : 6);
    ihdr.push_back(0); // compression
    ihdr.push_back(0); // filter method
    ihdr.push_back(0); // no interlace
    chunk("IHDR", ihdr);
    chunk("IDAT", compressed);
    chunk("IEND", {});
    return out;
}

inline void skip_ppm_space(const Bytes& data, std::size_t& pos)
{
    while (pos < data.size()) {
        const char c = char(data[pos]);
        if (c == '#') {
            while (pos < data.size() && data[pos] != '\n')
                ++pos;
        } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            ++pos;
        } else {
            return;
        }
    }
}

inline std::size_t read_ppm_int(const Bytes& data, std::size_t& pos)
{
    skip_ppm_space(data, pos);
    SKINCNN_CHECK(pos < data.size() && data[pos] >= '0' && data[pos] <= '9',
                  "ppm: malformed header");
    std::size_t v = 0;
    while (pos < data.size() && data[pos] >= '0' && data[pos] <= '9') {
        v = v * 10 + (data[pos] - '0');
        ++pos;
    }
    return v;
}

inline RawImage decode_ppm(const Bytes& data)
{
    SKINCNN_CHECK(data.size() >= 2 && data[0] == 'P' && data[1] == '6', "ppm: expected P6 magic");
    std::size_t pos = 2;
    const std::size_t w = read_ppm_int(data, pos);
    const std::size_t h = read_ppm_int(data, pos);
    const std::size_t maxval = read_ppm_int(data, pos);
    SKINCNN_CHECK(maxval == 255, "ppm: unsupported bit depth (maxval ", maxval, ", expected 255)");
    SKINCNN_CHECK(pos < data.size(), "ppm: truncated header");
    ++pos; // single whitespace byte after maxval
    SKINCNN_CHECK(data.size() - pos >= h * w * 3, "ppm: truncated pixel data");
    RawImage img{h, w, 3, Bytes(data.begin() + std::ptrdiff_t(pos),
                                data.begin() + std::ptrdiff_t(pos + h * w * 3))};
    return img;
}

} // namespace detail

// Decodes an 8-bit PNG (gray replicated, alpha dropped) or binary PPM.
inline RgbImage decode_image(const Bytes& data)
{
    detail::RawImage raw;
    if (detail::is_png(data))
        raw = detail::decode_png(data);
    else if (data.size() >= 2 && data[0] == 'P' && data[1] == '6')
        raw = detail::decode_ppm(data);
    else
        SKINCNN_CHECK(false, "unrecognized image format (expected PNG or P6 PPM)");

    RgbImage img{raw.height, raw.width, Bytes(raw.height * raw.width * 3)};
    const std::size_t n = raw.height * raw.width;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* src = raw.pixels.data() + i * raw.channels;
        std::uint8_t* dst = img.pixels.data() + i * 3;
        if (raw.channels <= 2) {
            dst[0] = dst[1] = dst[2] = src[0];
        } else {
            dst[0] = src[0];
            dst[1] = src[1];
            dst[2] = src[2];
        }
    }
    return img;
}

// Decodes single-channel data; multi-channel inputs use the first channel.
inline GrayImage decode_gray(const Bytes& data)
{
    detail::RawImage raw;
    if (detail::is_png(data))
        raw = detail::decode_png(data);
    else if (data.size() >= 2 && data[0] == 'P' && data[1] == '6')
        raw = detail::decode_ppm(data);
    else
        SKINCNN_CHECK(false, "unrecognized image format (expected PNG or P6 PPM)");
    GrayImage img{raw.height, raw.width, Bytes(raw.height * raw.width)};
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        img.pixels[i] = raw.pixels[i * raw.channels];
    return img;
}

inline Bytes encode_png_rgb(const RgbImage& img)
{
    return detail::encode_png({img.height, img.width, 3, img.pixels});
}

inline Bytes encode_ppm(const RgbImage& img)
{
    const std::string header = "P6\n" + std::to_string(img.width) + " " +
                               std::to_string(img.height) + "\n255\n";
    Bytes out(header.begin(), header.end());
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
    return out;
}

// Bilinear resampling with half-pixel centers, rounded to nearest 8-bit value.
// Same-size resize is an exact identity.
inline RgbImage resize_bilinear(const RgbImage& img, std::size_t out_h, std::size_t out_w)
{
    SKINCNN_CHECK(out_h > 0 && out_w > 0, "resize to zero dims");
    SKINCNN_CHECK(img.height > 0 && img.width > 0, "resize of empty image");
    RgbImage out{out_h, out_w, Bytes(out_h * out_w * 3)};
    const double sy = double(img.height) / double(out_h);
    const double sx = double(img.width) / double(out_w);
    for (std::size_t r = 0; r < out_h; ++r) {
        double fy = (double(r) + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, double(img.height - 1));
        const std::size_t y0 = std::size_t(fy);
        const std::size_t y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - double(y0);
        for (std::size_t c = 0; c < out_w; ++c) {
            double fx = (double(c) + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, double(img.width - 1));
            const std::size_t x0 = std::size_t(fx);
            const std::size_t x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - double(x0);
            for (std::size_t ch = 0; ch < 3; ++ch) {
                const double top = double(img.at(y0, x0, ch)) * (1 - wx) +
                                   double(img.at(y0, x1, ch)) * wx;
                const double bot = double(img.at(y1, x0, ch)) * (1 - wx) +
                                   double(img.at(y1, x1, ch)) * wx;
                const double v = top * (1 - wy) + bot * wy;
                out.at(r, c, ch) = std::uint8_t(std::lround(std::clamp(v, 0.0, 255.0)));
            }
        }
    }
    return out;
}

// Nearest-neighbor resize keeps masks strictly binary.
inline BinaryMask resize_mask_nearest(const BinaryMask& mask, std::size_t out_h, std::size_t out_w)
{
    SKINCNN_CHECK(out_h > 0 && out_w > 0, "resize to zero dims");
    SKINCNN_CHECK(mask.height > 0 && mask.width > 0, "resize of empty mask");
    BinaryMask out{out_h, out_w, Bytes(out_h * out_w)};
    for (std::size_t r = 0; r < out_h; ++r) {
        std::size_t sr = std::size_t((double(r) + 0.5) * double(mask.height) / double(out_h));
        sr = std::min(sr, mask.height - 1);
        for (std::size_t c = 0; c < out_w; ++c) {
            std::size_t sc = std::size_t((double(c) + 0.5) * double(mask.width) / double(out_w));
            sc = std::min(sc, mask.width - 1);
            out.on[r * out_w + c] = mask.on[sr * mask.width + sc];
        }
    }
    return out;
}

// Subtracts the global per-image mean and divides by the global standard
// deviation (over all pixels and channels), guarded by max(std, 1e-6).
inline FloatImage normalize(const RgbImage& img)
{
    const std::size_t n = img.pixels.size();
    SKINCNN_CHECK(n > 0, "normalize of empty image");
    double sum = 0;
    for (auto p : img.pixels)
        sum += p;
    const double mean = sum / double(n);
    double var = 0;
    for (auto p : img.pixels) {
        const double d = double(p) - mean;
        var += d * d;
    }
    const double stddev = std::max(std::sqrt(var / double(n)), 1e-6);

    FloatImage out{img.height, img.width, std::vector<float>(3 * img.height * img.width)};
    const std::size_t plane = img.height * img.width;
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t ch = 0; ch < 3; ++ch)
            out.values[ch * plane + i] = float((double(img.pixels[i * 3 + ch]) - mean) / stddev);
    return out;
}

// Same standardization on an already-float image; repeated application is a
// fixed point up to float precision.
inline FloatImage normalize(const FloatImage& img)
{
    const std::size_t n = img.values.size();
    SKINCNN_CHECK(n > 0, "normalize of empty image");
    double sum = 0;
    for (auto v : img.values)
        sum += v;
    const double mean = sum / double(n);
    double var = 0;
    for (auto v : img.values) {
        const double d = double(v) - mean;
        var += d * d;
    }
    const double stddev = std::max(std::sqrt(var / double(n)), 1e-6);
    FloatImage out{img.height, img.width, std::vector<float>(n)};
    for (std::size_t i = 0; i < n; ++i)
        out.values[i] = float((double(img.values[i]) - mean) / stddev);
    return out;
}

template <typename T = float>
Tensor<T> to_tensor(const FloatImage& img)
{
    Tensor<T> t({1, 3, img.height, img.width});
    for (std::size_t i = 0; i < img.values.size(); ++i)
        t.data()[i] = T(img.values[i]);
    return t;
}

inline BinaryMask binarize_mask(const GrayImage& gray, std::uint8_t threshold = 128)
{
    BinaryMask mask{gray.height, gray.width, Bytes(gray.pixels.size())};
    for (std::size_t i = 0; i < gray.pixels.size(); ++i)
        mask.on[i] = gray.pixels[i] >= threshold ? 1 : 0;
    return mask;
}

// Keeps only the largest 4-connected foreground component. Ties go to the
// component whose first pixel comes earliest in row-major order.
inline BinaryMask largest_component(const BinaryMask& mask)
{
    const std::size_t h = mask.height, w = mask.width;
    BinaryMask out{h, w, Bytes(h * w, 0)};
    std::vector<std::uint8_t> seen(h * w, 0);
    std::vector<std::size_t> stack, best, current;
    for (std::size_t start = 0; start < h * w; ++start) {
        if (!mask.on[start] || seen[start])
            continue;
        current.clear();
        stack.assign(1, start);
        seen[start] = 1;
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            current.push_back(i);
            const std::size_t r = i / w, c = i % w;
            const std::size_t nbr[4] = {r > 0 ? i - w : i, r + 1 < h ? i + w : i,
                                        c > 0 ? i - 1 : i, c + 1 < w ? i + 1 : i};
            for (std::size_t j : nbr)
                if (j != i && mask.on[j] && !seen[j]) {
                    seen[j] = 1;
                    stack.push_back(j);
                }
        }
        if (current.size() > best.size())
            best = current; // strict: earlier start index wins ties
    }
    for (std::size_t i : best)
        out.on[i] = 1;
    return out;
}

struct BoundingBox {
    std::size_t top = 0, left = 0, bottom = 0, right = 0; // inclusive
    bool empty = true;
};

inline BoundingBox mask_bbox(const BinaryMask& mask)
{
    BoundingBox box;
    for (std::size_t r = 0; r < mask.height; ++r)
        for (std::size_t c = 0; c < mask.width; ++c) {
            if (!mask.at(r, c))
                continue;
            if (box.empty) {
                box = {r, c, r, c, false};
            } else {
                box.top = std::min(box.top, r);
                box.left = std::min(box.left, c);
                box.bottom = std::max(box.bottom, r);
                box.right = std::max(box.right, c);
            }
        }
    return box;
}

// Crops the padded bounding box of the largest mask component and resizes it
// to out_size x out_size. An empty mask falls back to the whole image.
inline RgbImage crop_from_mask(const RgbImage& img, const BinaryMask& mask, double pad_frac = 0.1,
                               std::size_t out_size = 150)
{
    SKINCNN_CHECK(img.height == mask.height && img.width == mask.width,
                  "crop: image ", img.height, "x", img.width, " vs mask ", mask.height, "x",
                  mask.width);
    const BoundingBox box = mask_bbox(largest_component(mask));
    if (box.empty)
        return resize_bilinear(img, out_size, out_size);

    const std::size_t bh = box.bottom - box.top + 1;
    const std::size_t bw = box.right - box.left + 1;
    const std::size_t pad_r = std::size_t(std::lround(pad_frac * double(bh)));
    const std::size_t pad_c = std::size_t(std::lround(pad_frac * double(bw)));
    const std::size_t top = box.top > pad_r ? box.top - pad_r : 0;
    const std::size_t left = box.left > pad_c ? box.left - pad_c : 0;
    const std::size_t bottom = std::min(box.bottom + pad_r, img.height - 1);
    const std::size_t right = std::min(box.right + pad_c, img.width - 1);

    RgbImage sub{bottom - top + 1, right - left + 1, Bytes((bottom - top + 1) * (right - left + 1) * 3)};
    for (std::size_t r = 0; r < sub.height; ++r)
        std::memcpy(sub.pixels.data() + r * sub.width * 3,
                    img.pixels.data() + ((top + r) * img.width + left) * 3, sub.width * 3);
    return resize_bilinear(sub, out_size, out_size);
}

inline Bytes encode_mask_png(const BinaryMask& mask)
{
    Bytes gray(mask.on.size());
    for (std::size_t i = 0; i < gray.size(); ++i)
        gray[i] = mask.on[i] ? 255 : 0;
    return detail::encode_png({mask.height, mask.width, 1, std::move(gray)});
}

} // namespace skincnn
