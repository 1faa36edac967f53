#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "batchcur/error.hpp"
#include "batchcur/geometry.hpp"
#include "batchcur/random.hpp"

namespace batchcur {

// Channel-planar float image (C x H x W, row-major within a plane).
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Image() = default;
    Image(int c, int h, int w, float fill = 0.0f)
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

    std::size_t plane() const noexcept { return static_cast<std::size_t>(height) * width; }
    float& at(int c, int y, int x) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
    float at(int c, int y, int x) const { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }

    friend bool operator==(const Image&, const Image&) = default;
};

// Crops `rect` and resizes it bilinearly to out_size x out_size.
//
// Sampling uses the half-pixel-center convention (align_corners = false):
// output pixel o maps to source coordinate (o + 0.5) * in / out - 0.5,
// clamped to [0, in - 1]. Outputs are convex combinations of source pixels,
// so they stay within the source value range.
inline Image extract_and_resize(const Image& image, const Rect& rect, int out_size) {
    require_inside(rect, image.width, image.height);
    if (out_size < 1) throw ParameterError("out_size must be >= 1");

    struct Tap {
        int i0, i1;
        float f;
    };
    auto taps = [out_size](int in) {
        std::vector<Tap> t(static_cast<std::size_t>(out_size));
        const double scale = static_cast<double>(in) / out_size;
        for (int o = 0; o < out_size; ++o) {
            double src = std::clamp((o + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
            int i0 = static_cast<int>(std::floor(src));
            int i1 = std::min(i0 + 1, in - 1);
            t[o] = {i0, i1, static_cast<float>(src - i0)};
        }
        return t;
    };
    const auto tx = taps(rect.w);
    const auto ty = taps(rect.h);

    Image out(image.channels, out_size, out_size);
    for (int c = 0; c < image.channels; ++c) {
        for (int oy = 0; oy < out_size; ++oy) {
            const Tap& vy = ty[oy];
            for (int ox = 0; ox < out_size; ++ox) {
                const Tap& vx = tx[ox];
                const float p00 = image.at(c, rect.y + vy.i0, rect.x + vx.i0);
                const float p01 = image.at(c, rect.y + vy.i0, rect.x + vx.i1);
                const float p10 = image.at(c, rect.y + vy.i1, rect.x + vx.i0);
                const float p11 = image.at(c, rect.y + vy.i1, rect.x + vx.i1);
                const float top = p00 + (p01 - p00) * vx.f;
                const float bot = p10 + (p11 - p10) * vx.f;
                out.at(c, oy, ox) = top + (bot - top) * vy.f;
            }
        }
    }
    return out;
}

struct AugConfig {
    double flip_prob = 0.5;
    double brightness = 0.4;
    double contrast = 0.4;
    double saturation = 0.4;
    double grayscale_prob = 0.2;

    static AugConfig none() { return {0.0, 0.0, 0.0, 0.0, 0.0}; }

    friend bool operator==(const AugConfig&, const AugConfig&) = default;
};

// What photometric_augment actually applied to one view.
struct AugRecord {
    bool flipped = false;
    float brightness = 1.0f;
    float contrast = 1.0f;
    float saturation = 1.0f;
    bool grayscale = false;

    friend bool operator==(const AugRecord&, const AugRecord&) = default;
};

namespace detail {

inline float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

inline float jitter_factor(Rng& rng, double strength) {
    return static_cast<float>(uniform(rng, std::max(0.0, 1.0 - strength), 1.0 + strength));
}

}  // namespace detail

// Horizontal flip, then brightness / contrast / saturation jitter, then random
// grayscale. A factor of exactly 1 leaves the image untouched. The number of
// random draws is fixed regardless of outcome.
inline Image photometric_augment(Rng& rng, Image image, const AugConfig& cfg, AugRecord* record = nullptr) {
    AugRecord rec;
    rec.flipped = bernoulli(rng, cfg.flip_prob);
    rec.brightness = detail::jitter_factor(rng, cfg.brightness);
    rec.contrast = detail::jitter_factor(rng, cfg.contrast);
    rec.saturation = detail::jitter_factor(rng, cfg.saturation);
    rec.grayscale = bernoulli(rng, cfg.grayscale_prob);
    if (record) *record = rec;

    const int H = image.height, W = image.width, C = image.channels;
    const std::size_t P = image.plane();
    auto clamp01 = [](float v) { return std::clamp(v, 0.0f, 1.0f); };

    if (rec.flipped) {
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                std::reverse(image.data.begin() + c * P + static_cast<std::size_t>(y) * W,
                             image.data.begin() + c * P + static_cast<std::size_t>(y + 1) * W);
    }
    if (rec.brightness != 1.0f) {
        for (float& v : image.data) v = clamp01(v * rec.brightness);
    }
    const bool rgb = C == 3;
    auto gray_at = [&](std::size_t i) {
        return rgb ? detail::luma(image.data[i], image.data[P + i], image.data[2 * P + i]) : image.data[i];
    };
    if (rec.contrast != 1.0f) {
        double mean = 0.0;
        for (std::size_t i = 0; i < P; ++i) mean += gray_at(i);
        const float m = static_cast<float>(mean / static_cast<double>(P));
        for (float& v : image.data) v = clamp01((v - m) * rec.contrast + m);
    }
    if (rgb && rec.saturation != 1.0f) {
        for (std::size_t i = 0; i < P; ++i) {
            const float g = gray_at(i);
            for (int c = 0; c < 3; ++c) {
                float& v = image.data[c * P + i];
                v = clamp01((v - g) * rec.saturation + g);
            }
        }
    }
    if (rgb && rec.grayscale) {
        for (std::size_t i = 0; i < P; ++i) {
            const float g = clamp01(gray_at(i));
            image.data[i] = image.data[P + i] = image.data[2 * P + i] = g;
        }
    }
    return image;
}

}  // namespace batchcur
