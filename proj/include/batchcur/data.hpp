#pragma once

#include <algorithm>
#include <array>
#include <iterator>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "batchcur/error.hpp"
#include "batchcur/image.hpp"
#include "batchcur/random.hpp"

namespace batchcur {

struct LabeledImageSet {
    std::vector<Image> images;
    std::vector<int> labels;
    int num_classes = 10;

    std::size_t size() const noexcept { return images.size(); }

    void validate() const {
        if (images.size() != labels.size()) throw ShapeError("image count and label count differ");
        for (std::size_t i = 0; i < images.size(); ++i) {
            if (labels[i] < 0 || labels[i] >= num_classes)
                throw ShapeError("label out of range at index " + std::to_string(i));
            for (float v : images[i].data)
                if (!(v >= 0.0f && v <= 1.0f)) throw ShapeError("pixel outside [0,1] in image " + std::to_string(i));
        }
    }
};

namespace cifar10 {

inline constexpr int kSide = 32;
inline constexpr int kPixels = 3 * kSide * kSide;
inline constexpr std::size_t kRecordBytes = 1 + kPixels;

}  // namespace cifar10

// One CIFAR-10 binary batch: 3073-byte records, a label byte followed by
// 1024 red, 1024 green and 1024 blue bytes, each plane row-major.
inline LabeledImageSet load_cifar10_batch(const std::filesystem::path& path) {
    const std::string name = path.string();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + name);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    const std::size_t records = bytes.size() / cifar10::kRecordBytes;
    if (bytes.size() % cifar10::kRecordBytes != 0)
        throw FormatError(name, records,
                          "truncated record (" + std::to_string(bytes.size() % cifar10::kRecordBytes) + " of " +
                              std::to_string(cifar10::kRecordBytes) + " bytes)");

    LabeledImageSet set;
    set.num_classes = 10;
    set.images.reserve(records);
    set.labels.reserve(records);
    for (std::size_t r = 0; r < records; ++r) {
        const unsigned char* rec = bytes.data() + r * cifar10::kRecordBytes;
        if (rec[0] > 9) throw FormatError(name, r, "label byte " + std::to_string(rec[0]) + " > 9");
        Image img(3, cifar10::kSide, cifar10::kSide);
        for (int i = 0; i < cifar10::kPixels; ++i) img.data[i] = static_cast<float>(rec[1 + i]) / 255.0f;
        set.labels.push_back(rec[0]);
        set.images.push_back(std::move(img));
    }
    return set;
}

// Reads data_batch_1..5.bin (train) and test_batch.bin (test) from `dir`.
inline std::pair<LabeledImageSet, LabeledImageSet> load_cifar10(const std::filesystem::path& dir) {
    auto require = [&](const std::string& file) {
        auto p = dir / file;
        if (!std::filesystem::exists(p)) throw IoError("missing CIFAR-10 file " + p.string());
        return p;
    };
    LabeledImageSet train;
    for (int b = 1; b <= 5; ++b) {
        auto part = load_cifar10_batch(require("data_batch_" + std::to_string(b) + ".bin"));
        std::move(part.images.begin(), part.images.end(), std::back_inserter(train.images));
        train.labels.insert(train.labels.end(), part.labels.begin(), part.labels.end());
    }
    return {std::move(train), load_cifar10_batch(require("test_batch.bin"))};
}

struct SyntheticSpec {
    int num_classes = 10;
    int per_class = 500;
    std::uint64_t seed = 0;
    int image_size = 32;

    friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

namespace detail {

inline std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hp) % 6) {
        case 0: r = c, g = x; break;
        case 1: r = x, g = c; break;
        case 2: g = c, b = x; break;
        case 3: g = x, b = c; break;
        case 4: r = x, b = c; break;
        default: r = c, b = x; break;
    }
    const double m = v - c;
    return {static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}

}  // namespace detail

// Class-conditional toy images. Class c has a background hue c / K and a
// shape (square, disc, bar or ring, by c mod 4) in the complementary hue.
// Instances jitter hue, brightness, shape size and shape position, and carry
// per-pixel noise. Labels are interleaved so any prefix is balanced.
inline LabeledImageSet make_synthetic_set(const SyntheticSpec& spec) {
    if (spec.num_classes < 1 || spec.per_class < 1) throw ParameterError("synthetic counts must be >= 1");
    if (spec.image_size < 8) throw ParameterError("synthetic image_size must be >= 8");

    const int S = spec.image_size;
    Rng rng = make_rng(spec.seed, {0x73796e7468ULL});
    LabeledImageSet set;
    set.num_classes = spec.num_classes;
    set.images.reserve(static_cast<std::size_t>(spec.num_classes) * spec.per_class);
    for (int i = 0; i < spec.per_class; ++i) {
        for (int c = 0; c < spec.num_classes; ++c) {
            const double hue = static_cast<double>(c) / spec.num_classes + uniform(rng, -0.025, 0.025);
            const double value = uniform(rng, 0.6, 0.85);
            const auto bg = detail::hsv_to_rgb(hue, 0.65, value);
            const auto fg = detail::hsv_to_rgb(hue + 0.5, 0.8, std::min(1.0, value + 0.15));
            const double radius = S * uniform(rng, 0.18, 0.28);
            const double cx = S * 0.5 + uniform(rng, -0.18, 0.18) * S;
            const double cy = S * 0.5 + uniform(rng, -0.18, 0.18) * S;
            const int shape = c % 4;

            Image img(3, S, S);
            for (int y = 0; y < S; ++y) {
                for (int x = 0; x < S; ++x) {
                    const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                    const double r = std::sqrt(dx * dx + dy * dy);
                    bool inside = false;
                    switch (shape) {
                        case 0: inside = std::fabs(dx) <= radius && std::fabs(dy) <= radius; break;
                        case 1: inside = r <= radius; break;
                        case 2: inside = std::fabs(dy) <= radius * 0.45 && std::fabs(dx) <= radius * 1.4; break;
                        default: inside = r <= radius && r >= radius * 0.55; break;
                    }
                    const auto& col = inside ? fg : bg;
                    for (int ch = 0; ch < 3; ++ch) {
                        const double v = col[ch] + uniform(rng, -0.06, 0.06);
                        img.at(ch, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
                    }
                }
            }
            set.images.push_back(std::move(img));
            set.labels.push_back(c);
        }
    }
    return set;
}

}  // namespace batchcur
