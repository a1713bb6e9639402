#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <vector>

#include <zlib.h>

#include "vad/binio.hpp"
#include "vad/errors.hpp"
#include "vad/image.hpp"

namespace vad {

// Minimal PNG codec backed by zlib: 8-bit gray/RGB(A) non-interlaced images,
// which covers the dataset layout (frames, masks) and overlay output without
// pulling in an image library. Color input collapses to grayscale with the
// usual luma weights 0.299/0.587/0.114.
namespace png {

namespace detail {

inline std::uint32_t be32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char type[5],
                      const std::uint8_t* data, std::size_t len) {
    put_be32(out, static_cast<std::uint32_t>(len));
    std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    if (len > 0) out.insert(out.end(), data, data + len);
    std::uint32_t crc = static_cast<std::uint32_t>(
        ::crc32(0L, out.data() + start, static_cast<uInt>(4 + len)));
    put_be32(out, crc);
}

inline int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

inline void unfilter(std::vector<std::uint8_t>& raster, int height, std::size_t rowbytes, int bpp) {
    std::vector<std::uint8_t> prev(rowbytes, 0);
    for (int y = 0; y < height; ++y) {
        std::uint8_t* row = raster.data() + static_cast<std::size_t>(y) * (rowbytes + 1);
        int filter = row[0];
        std::uint8_t* cur = row + 1;
        switch (filter) {
            case 0: break;
            case 1:
                for (std::size_t i = bpp; i < rowbytes; ++i) cur[i] = static_cast<std::uint8_t>(cur[i] + cur[i - bpp]);
                break;
            case 2:
                for (std::size_t i = 0; i < rowbytes; ++i) cur[i] = static_cast<std::uint8_t>(cur[i] + prev[i]);
                break;
            case 3:
                for (std::size_t i = 0; i < rowbytes; ++i) {
                    int left = i >= static_cast<std::size_t>(bpp) ? cur[i - bpp] : 0;
                    cur[i] = static_cast<std::uint8_t>(cur[i] + ((left + prev[i]) >> 1));
                }
                break;
            case 4:
                for (std::size_t i = 0; i < rowbytes; ++i) {
                    int left = i >= static_cast<std::size_t>(bpp) ? cur[i - bpp] : 0;
                    int upleft = i >= static_cast<std::size_t>(bpp) ? prev[i - bpp] : 0;
                    cur[i] = static_cast<std::uint8_t>(cur[i] + paeth(left, prev[i], upleft));
                }
                break;
            default:
                raise(ErrorKind::Format, "png: unknown filter type " + std::to_string(filter));
        }
        std::memcpy(prev.data(), cur, rowbytes);
    }
}

} // namespace detail

inline Image decode_gray(const std::vector<std::uint8_t>& file, const std::string& what) {
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (file.size() < 8 || std::memcmp(file.data(), sig, 8) != 0)
        raise(ErrorKind::Format, what + ": not a PNG file");

    std::uint32_t width = 0, height = 0;
    int bit_depth = 0, color_type = 0, interlace = 0;
    std::vector<std::uint8_t> idat;
    std::size_t pos = 8;
    bool saw_ihdr = false, saw_iend = false;
    while (pos + 8 <= file.size() && !saw_iend) {
        std::uint32_t len = detail::be32(file.data() + pos);
        if (pos + 12 + len > file.size()) raise(ErrorKind::Format, what + ": truncated chunk");
        const char* type = reinterpret_cast<const char*>(file.data() + pos + 4);
        const std::uint8_t* data = file.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) raise(ErrorKind::Format, what + ": bad IHDR");
            width = detail::be32(data);
            height = detail::be32(data + 4);
            bit_depth = data[8];
            color_type = data[9];
            interlace = data[12];
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || width == 0 || height == 0) raise(ErrorKind::Format, what + ": missing IHDR");
    if (bit_depth != 8) raise(ErrorKind::Format, what + ": only 8-bit PNGs supported");
    if (interlace != 0) raise(ErrorKind::Format, what + ": interlaced PNGs not supported");
    int channels;
    switch (color_type) {
        case 0: channels = 1; break;
        case 2: channels = 3; break;
        case 4: channels = 2; break;
        case 6: channels = 4; break;
        default: raise(ErrorKind::Format, what + ": unsupported color type " + std::to_string(color_type));
    }

    std::size_t rowbytes = static_cast<std::size_t>(width) * channels;
    std::vector<std::uint8_t> raster(static_cast<std::size_t>(height) * (rowbytes + 1));
    uLongf out_len = static_cast<uLongf>(raster.size());
    int rc = ::uncompress(raster.data(), &out_len, idat.data(), static_cast<uLong>(idat.size()));
    if (rc != Z_OK || out_len != raster.size())
        raise(ErrorKind::Format, what + ": corrupt PNG pixel data");
    detail::unfilter(raster, static_cast<int>(height), rowbytes, channels);

    Image img(static_cast<int>(width), static_cast<int>(height));
    for (std::uint32_t y = 0; y < height; ++y) {
        const std::uint8_t* row = raster.data() + static_cast<std::size_t>(y) * (rowbytes + 1) + 1;
        for (std::uint32_t x = 0; x < width; ++x) {
            const std::uint8_t* px = row + static_cast<std::size_t>(x) * channels;
            float v;
            if (channels == 1 || channels == 2) {
                v = static_cast<float>(px[0]);
            } else {
                v = 0.299f * px[0] + 0.587f * px[1] + 0.114f * px[2];
            }
            img.at(static_cast<int>(x), static_cast<int>(y)) = v;
        }
    }
    return img;
}

inline Image load_gray(const std::filesystem::path& path) {
    return decode_gray(read_file_bytes(path), path.string());
}

namespace detail {

inline std::vector<std::uint8_t> encode(const std::uint8_t* pixels, int width, int height,
                                        int channels) {
    std::size_t rowbytes = static_cast<std::size_t>(width) * channels;
    std::vector<std::uint8_t> raster(static_cast<std::size_t>(height) * (rowbytes + 1));
    for (int y = 0; y < height; ++y) {
        std::uint8_t* row = raster.data() + static_cast<std::size_t>(y) * (rowbytes + 1);
        row[0] = 0; // filter: none
        std::memcpy(row + 1, pixels + static_cast<std::size_t>(y) * rowbytes, rowbytes);
    }
    uLongf bound = ::compressBound(static_cast<uLong>(raster.size()));
    std::vector<std::uint8_t> compressed(bound);
    int rc = ::compress2(compressed.data(), &bound, raster.data(),
                         static_cast<uLong>(raster.size()), 6);
    if (rc != Z_OK) raise(ErrorKind::Io, "png: compression failed");
    compressed.resize(bound);

    std::vector<std::uint8_t> out;
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    out.insert(out.end(), sig, sig + 8);
    std::uint8_t ihdr[13];
    ihdr[0] = static_cast<std::uint8_t>(width >> 24); ihdr[1] = static_cast<std::uint8_t>(width >> 16);
    ihdr[2] = static_cast<std::uint8_t>(width >> 8);  ihdr[3] = static_cast<std::uint8_t>(width);
    ihdr[4] = static_cast<std::uint8_t>(height >> 24); ihdr[5] = static_cast<std::uint8_t>(height >> 16);
    ihdr[6] = static_cast<std::uint8_t>(height >> 8);  ihdr[7] = static_cast<std::uint8_t>(height);
    ihdr[8] = 8;
    ihdr[9] = channels == 1 ? 0 : 2;
    ihdr[10] = 0; ihdr[11] = 0; ihdr[12] = 0;
    put_chunk(out, "IHDR", ihdr, 13);
    put_chunk(out, "IDAT", compressed.data(), compressed.size());
    put_chunk(out, "IEND", nullptr, 0);
    return out;
}

} // namespace detail

// Saves a grayscale image; intensities are clamped to [0, 255] and rounded.
inline void save_gray(const std::filesystem::path& path, const Image& img) {
    std::vector<std::uint8_t> px(img.size());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            px[static_cast<std::size_t>(y) * img.width() + x] =
                static_cast<std::uint8_t>(std::lround(std::clamp(img.at(x, y), 0.0f, 255.0f)));
    write_file_bytes(path, detail::encode(px.data(), img.width(), img.height(), 1));
}

inline void save_rgb(const std::filesystem::path& path, const RgbImage& img) {
    write_file_bytes(path, detail::encode(img.rgb.data(), img.width, img.height, 3));
}

} // namespace png
} // namespace vad
