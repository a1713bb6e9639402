#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "vad/errors.hpp"

namespace vad {

// Single-channel float image, row-major. Intensities are conventionally in
// [0, 255] for frames; flow planes reuse the same container with px/frame units.
class Image {
public:
    Image() = default;
    Image(int width, int height, float fill = 0.0f)
        : w_(width), h_(height), px_(static_cast<std::size_t>(width) * height, fill) {}

    int width() const { return w_; }
    int height() const { return h_; }
    std::size_t size() const { return px_.size(); }

    float& at(int x, int y) { return px_[static_cast<std::size_t>(y) * w_ + x]; }
    float at(int x, int y) const { return px_[static_cast<std::size_t>(y) * w_ + x]; }

    float* data() { return px_.data(); }
    const float* data() const { return px_.data(); }

    // clamp-to-edge access
    float at_clamped(int x, int y) const {
        x = std::clamp(x, 0, w_ - 1);
        y = std::clamp(y, 0, h_ - 1);
        return at(x, y);
    }

    float sample_bilinear(float x, float y) const {
        int x0 = static_cast<int>(std::floor(x));
        int y0 = static_cast<int>(std::floor(y));
        float fx = x - static_cast<float>(x0);
        float fy = y - static_cast<float>(y0);
        float v00 = at_clamped(x0, y0), v10 = at_clamped(x0 + 1, y0);
        float v01 = at_clamped(x0, y0 + 1), v11 = at_clamped(x0 + 1, y0 + 1);
        float a = v00 + fx * (v10 - v00);
        float b = v01 + fx * (v11 - v01);
        return a + fy * (b - a);
    }

    bool same_shape(const Image& o) const { return w_ == o.w_ && h_ == o.h_; }

    bool operator==(const Image& o) const { return w_ == o.w_ && h_ == o.h_ && px_ == o.px_; }

private:
    int w_ = 0, h_ = 0;
    std::vector<float> px_;
};

// Bilinear resize; output pixel centers map onto input pixel centers.
inline Image resize_bilinear(const Image& src, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1) raise(ErrorKind::InvalidTransform, "degenerate resize target");
    Image dst(out_w, out_h);
    float sx = static_cast<float>(src.width()) / static_cast<float>(out_w);
    float sy = static_cast<float>(src.height()) / static_cast<float>(out_h);
    for (int y = 0; y < out_h; ++y) {
        float fy = (static_cast<float>(y) + 0.5f) * sy - 0.5f;
        for (int x = 0; x < out_w; ++x) {
            float fx = (static_cast<float>(x) + 0.5f) * sx - 0.5f;
            dst.at(x, y) = src.sample_bilinear(fx, fy);
        }
    }
    return dst;
}

// Rotation about the image center on the same canvas; samples outside the
// source are zero (the padded region).
inline Image rotate_about_center(const Image& src, double degrees) {
    Image dst(src.width(), src.height());
    double rad = degrees * 3.14159265358979323846 / 180.0;
    double c = std::cos(rad), s = std::sin(rad);
    double cx = (src.width() - 1) * 0.5, cy = (src.height() - 1) * 0.5;
    for (int y = 0; y < dst.height(); ++y) {
        for (int x = 0; x < dst.width(); ++x) {
            // inverse map: rotate the output coordinate back into the source
            double dx = x - cx, dy = y - cy;
            double sx = c * dx + s * dy + cx;
            double sy = -s * dx + c * dy + cy;
            if (sx < -0.5 || sy < -0.5 || sx > src.width() - 0.5 || sy > src.height() - 0.5) {
                dst.at(x, y) = 0.0f;
            } else {
                dst.at(x, y) = src.sample_bilinear(static_cast<float>(sx), static_cast<float>(sy));
            }
        }
    }
    return dst;
}

// 2x2 box-average downsample (dimensions halved, rounding up at odd edges).
inline Image downsample_half(const Image& src) {
    int w = (src.width() + 1) / 2, h = (src.height() + 1) / 2;
    Image dst(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            float sum = 0.0f;
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx)
                    sum += src.at_clamped(2 * x + dx, 2 * y + dy);
            dst.at(x, y) = sum * 0.25f;
        }
    }
    return dst;
}

// 8-bit RGB image for overlays and report rendering.
struct RgbImage {
    int width = 0, height = 0;
    std::vector<std::uint8_t> rgb; // 3 bytes per pixel, row-major

    RgbImage() = default;
    RgbImage(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

    void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        if (x < 0 || y < 0 || x >= width || y >= height) return;
        std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
        rgb[i] = r; rgb[i + 1] = g; rgb[i + 2] = b;
    }
};

inline RgbImage to_rgb(const Image& gray) {
    RgbImage out(gray.width(), gray.height());
    for (int y = 0; y < gray.height(); ++y)
        for (int x = 0; x < gray.width(); ++x) {
            auto v = static_cast<std::uint8_t>(std::clamp(gray.at(x, y), 0.0f, 255.0f));
            out.set(x, y, v, v, v);
        }
    return out;
}

} // namespace vad
