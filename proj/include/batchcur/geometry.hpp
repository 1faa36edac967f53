#pragma once

// Random-resized-crop geometry: crop sampling, pair configuration
// classification, constrained pair samplers, coverage heatmaps and the Monte
// Carlo statistics built on top of them.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "batchcur/error.hpp"
#include "batchcur/random.hpp"

namespace batchcur {

// Axis-aligned integer crop region. Pixel columns [x, x + w), rows [y, y + h).
struct Rect {
    int x = 0;
    int y = 0;
    int w = 1;
    int h = 1;

    constexpr int right() const noexcept { return x + w; }
    constexpr int bottom() const noexcept { return y + h; }
    constexpr long long area() const noexcept { return static_cast<long long>(w) * h; }

    constexpr bool fits(int image_w, int image_h) const noexcept {
        return x >= 0 && y >= 0 && w >= 1 && h >= 1 && right() <= image_w && bottom() <= image_h;
    }

    friend constexpr bool operator==(const Rect&, const Rect&) = default;
};

inline std::ostream& operator<<(std::ostream& os, const Rect& r) {
    return os << "Rect(" << r.x << ", " << r.y << ", " << r.w << ", " << r.h << ")";
}

inline void require_inside(const Rect& r, int image_w, int image_h) {
    if (!r.fits(image_w, image_h)) {
        throw GeometryError("rect (" + std::to_string(r.x) + "," + std::to_string(r.y) + "," +
                            std::to_string(r.w) + "," + std::to_string(r.h) + ") is not inside a " +
                            std::to_string(image_w) + "x" + std::to_string(image_h) + " image");
    }
}

struct CropParams {
    double scale_lo = 0.08;
    double scale_hi = 1.0;
    double ratio_lo = 3.0 / 4.0;
    double ratio_hi = 4.0 / 3.0;
    int max_attempts = 10;
    int out_size = 32;

    void validate() const {
        if (!(scale_lo > 0.0)) throw ParameterError("scale_lo must be > 0");
        if (!(scale_lo <= scale_hi)) throw ParameterError("scale_lo must be <= scale_hi");
        if (!(scale_hi <= 1.0)) throw ParameterError("scale_hi must be <= 1");
        if (!(ratio_lo > 0.0)) throw ParameterError("ratio_lo must be > 0");
        if (!(ratio_lo <= ratio_hi)) throw ParameterError("ratio_lo must be <= ratio_hi");
        if (max_attempts < 1) throw ParameterError("max_attempts must be >= 1");
        if (out_size < 1) throw ParameterError("out_size must be >= 1");
    }

    friend bool operator==(const CropParams&, const CropParams&) = default;
};

// Random resized crop. Per attempt the target area is uniform in the scale
// range and the aspect ratio is log-uniform in the ratio range; sides are
// rounded half away from zero. After max_attempts misses the aspect ratio is
// clamped into range and the largest fitting rect is center-cropped.
inline Rect sample_crop(Rng& rng, int image_w, int image_h, const CropParams& params) {
    if (image_w < 1 || image_h < 1) throw ParameterError("image dimensions must be >= 1");
    params.validate();

    const double area = static_cast<double>(image_w) * image_h;
    const double log_lo = std::log(params.ratio_lo);
    const double log_hi = std::log(params.ratio_hi);
    for (int attempt = 0; attempt < params.max_attempts; ++attempt) {
        const double target = area * uniform(rng, params.scale_lo, params.scale_hi);
        const double ratio = std::exp(uniform(rng, log_lo, log_hi));
        const long w = std::lround(std::sqrt(target * ratio));
        const long h = std::lround(std::sqrt(target / ratio));
        if (w > 0 && w <= image_w && h > 0 && h <= image_h) {
            Rect r;
            r.w = static_cast<int>(w);
            r.h = static_cast<int>(h);
            r.y = uniform_int(rng, 0, image_h - r.h);
            r.x = uniform_int(rng, 0, image_w - r.w);
            return r;
        }
    }

    const double in_ratio = static_cast<double>(image_w) / image_h;
    Rect r{0, 0, image_w, image_h};
    if (in_ratio < params.ratio_lo) {
        r.w = image_w;
        r.h = static_cast<int>(std::clamp<long>(std::lround(image_w / params.ratio_lo), 1, image_h));
    } else if (in_ratio > params.ratio_hi) {
        r.h = image_h;
        r.w = static_cast<int>(std::clamp<long>(std::lround(image_h * params.ratio_hi), 1, image_w));
    }
    r.x = (image_w - r.w) / 2;
    r.y = (image_h - r.h) / 2;
    return r;
}

enum class PairConfiguration { GlobalLocal, Adjacent, Intersection };

inline constexpr std::string_view to_string(PairConfiguration c) noexcept {
    switch (c) {
        case PairConfiguration::GlobalLocal: return "global-local";
        case PairConfiguration::Adjacent: return "adjacent";
        case PairConfiguration::Intersection: return "intersection";
    }
    return "?";
}

// How rect boundaries count when deciding containment and disjointness.
//
// ClosedRegion treats a rect as the closed set [x, x+w] x [y, y+h]. Pairs are
// Adjacent when the closed sets are disjoint (a shared edge is contact, not
// adjacency) and GlobalLocal when one rect lies strictly inside the other's
// interior (a shared edge breaks containment, so equal rects intersect).
// This is the rule that reproduces the published configuration frequencies
// (17.3% / 1.4% / 81.3% for default crops on 32x32) and the per-regime patch
// sizes, and it is the default.
//
// PixelSet compares the covered pixel sets: containment includes equality and
// edge-touching rects share no pixel, so they are Adjacent.
enum class ContactRule { ClosedRegion, PixelSet };

inline constexpr std::string_view to_string(ContactRule r) noexcept {
    return r == ContactRule::ClosedRegion ? "closed" : "pixel";
}

inline std::optional<ContactRule> parse_contact_rule(std::string_view s) {
    if (s == "closed") return ContactRule::ClosedRegion;
    if (s == "pixel") return ContactRule::PixelSet;
    return std::nullopt;
}

// Symmetric in its rect arguments.
inline constexpr PairConfiguration classify_pair(const Rect& a, const Rect& b,
                                                 ContactRule rule = ContactRule::ClosedRegion) noexcept {
    if (rule == ContactRule::PixelSet) {
        if (a.right() <= b.x || b.right() <= a.x || a.bottom() <= b.y || b.bottom() <= a.y)
            return PairConfiguration::Adjacent;
        auto within = [](const Rect& p, const Rect& q) {
            return p.x >= q.x && p.y >= q.y && p.right() <= q.right() && p.bottom() <= q.bottom();
        };
        return within(a, b) || within(b, a) ? PairConfiguration::GlobalLocal : PairConfiguration::Intersection;
    }
    if (a.right() < b.x || b.right() < a.x || a.bottom() < b.y || b.bottom() < a.y)
        return PairConfiguration::Adjacent;
    auto interior = [](const Rect& p, const Rect& q) {
        return p.x > q.x && p.y > q.y && p.right() < q.right() && p.bottom() < q.bottom();
    };
    return interior(a, b) || interior(b, a) ? PairConfiguration::GlobalLocal : PairConfiguration::Intersection;
}

enum class RegimeMode { Default, GlobalLocalOnly, AdjacentOnly, IntersectionOnly, EqualConfiguration };

inline constexpr std::string_view to_string(RegimeMode m) noexcept {
    switch (m) {
        case RegimeMode::Default: return "default";
        case RegimeMode::GlobalLocalOnly: return "global-local";
        case RegimeMode::AdjacentOnly: return "adjacent";
        case RegimeMode::IntersectionOnly: return "intersection";
        case RegimeMode::EqualConfiguration: return "equal";
    }
    return "?";
}

inline std::optional<RegimeMode> parse_regime_mode(std::string_view s) {
    for (auto m : {RegimeMode::Default, RegimeMode::GlobalLocalOnly, RegimeMode::AdjacentOnly,
                   RegimeMode::IntersectionOnly, RegimeMode::EqualConfiguration}) {
        if (to_string(m) == s) return m;
    }
    return std::nullopt;
}

struct SamplingRegime {
    RegimeMode mode = RegimeMode::Default;
    CropParams crop{};
    ContactRule rule = ContactRule::ClosedRegion;
    // Pair draws allowed per returned pair in the constrained modes.
    std::size_t rejection_budget = 10000;

    void validate() const {
        crop.validate();
        if (rejection_budget < 1) throw ParameterError("rejection_budget must be >= 1");
    }

    static SamplingRegime with_scale(RegimeMode mode, double lo, double hi) {
        SamplingRegime r;
        r.mode = mode;
        r.crop.scale_lo = lo;
        r.crop.scale_hi = hi;
        return r;
    }
    static SamplingRegime big_patches() { return with_scale(RegimeMode::Default, 0.5, 1.0); }
    static SamplingRegime small_patches() { return with_scale(RegimeMode::Default, 0.08, 0.5); }
    static SamplingRegime global_local_big_patches() { return with_scale(RegimeMode::GlobalLocalOnly, 0.5, 1.0); }

    friend bool operator==(const SamplingRegime&, const SamplingRegime&) = default;
};

inline std::optional<PairConfiguration> required_configuration(RegimeMode mode) noexcept {
    switch (mode) {
        case RegimeMode::GlobalLocalOnly: return PairConfiguration::GlobalLocal;
        case RegimeMode::AdjacentOnly: return PairConfiguration::Adjacent;
        case RegimeMode::IntersectionOnly: return PairConfiguration::Intersection;
        default: return std::nullopt;
    }
}

// Draws a crop pair obeying the regime. Constrained modes rejection-sample
// whole pairs; EqualConfiguration first picks its target uniformly.
inline std::pair<Rect, Rect> sample_pair(Rng& rng, int image_w, int image_h, const SamplingRegime& regime) {
    regime.validate();
    if (regime.mode == RegimeMode::Default) {
        Rect a = sample_crop(rng, image_w, image_h, regime.crop);
        Rect b = sample_crop(rng, image_w, image_h, regime.crop);
        return {a, b};
    }

    PairConfiguration target;
    if (regime.mode == RegimeMode::EqualConfiguration) {
        target = static_cast<PairConfiguration>(uniform_int(rng, 0, 2));
    } else {
        target = *required_configuration(regime.mode);
    }
    for (std::size_t attempt = 0; attempt < regime.rejection_budget; ++attempt) {
        Rect a = sample_crop(rng, image_w, image_h, regime.crop);
        Rect b = sample_crop(rng, image_w, image_h, regime.crop);
        if (classify_pair(a, b, regime.rule) == target) return {a, b};
    }
    throw SamplingExhaustedError("no " + std::string(to_string(target)) + " pair found", regime.rejection_budget);
}

struct ConfigStats {
    std::uint64_t n_samples = 0;
    double freq_global_local = 0.0;
    double freq_adjacent = 0.0;
    double freq_intersection = 0.0;
    double mean_area_fraction = 0.0;
};

namespace detail {

inline constexpr std::uint64_t kShardSize = 1u << 15;

// Runs `work(shard_index)` for every shard on `workers` threads. Shards are
// seeded by index, so the merged result does not depend on the worker count.
template <class Work>
void for_each_shard(std::uint64_t shards, unsigned workers, Work&& work) {
    workers = std::max(1u, workers);
    if (workers == 1 || shards <= 1) {
        for (std::uint64_t s = 0; s < shards; ++s) work(s);
        return;
    }
    std::atomic<std::uint64_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < workers; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::uint64_t s = next++; s < shards; s = next++) work(s);
            } catch (...) {
                errors[t] = std::current_exception();
                next = shards;
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail

// Classifies n_samples pairs drawn under `regime` and averages the area
// fraction of both patches of every pair.
inline ConfigStats config_statistics(std::uint64_t seed, int image_w, int image_h, const SamplingRegime& regime,
                                     std::uint64_t n_samples, unsigned workers = 1) {
    if (n_samples < 1) throw ParameterError("n_samples must be >= 1");
    if (image_w < 1 || image_h < 1) throw ParameterError("image dimensions must be >= 1");
    regime.validate();

    struct Tally {
        std::uint64_t counts[3] = {0, 0, 0};
        std::uint64_t area_sum = 0;
    };
    const std::uint64_t shards = (n_samples + detail::kShardSize - 1) / detail::kShardSize;
    std::vector<Tally> tallies(shards);
    detail::for_each_shard(shards, workers, [&](std::uint64_t s) {
        Rng rng = make_rng(seed, {s});
        const std::uint64_t begin = s * detail::kShardSize;
        const std::uint64_t end = std::min(n_samples, begin + detail::kShardSize);
        Tally& t = tallies[s];
        for (std::uint64_t i = begin; i < end; ++i) {
            auto [a, b] = sample_pair(rng, image_w, image_h, regime);
            ++t.counts[static_cast<int>(classify_pair(a, b, regime.rule))];
            t.area_sum += static_cast<std::uint64_t>(a.area() + b.area());
        }
    });

    Tally total;
    for (const auto& t : tallies) {
        for (int k = 0; k < 3; ++k) total.counts[k] += t.counts[k];
        total.area_sum += t.area_sum;
    }
    const double n = static_cast<double>(n_samples);
    ConfigStats stats;
    stats.n_samples = n_samples;
    stats.freq_global_local = total.counts[0] / n;
    stats.freq_adjacent = total.counts[1] / n;
    stats.freq_intersection = total.counts[2] / n;
    stats.mean_area_fraction =
        static_cast<double>(total.area_sum) / (2.0 * n * static_cast<double>(image_w) * image_h);
    return stats;
}

// Max-normalized per-pixel coverage, row-major (height rows of width values).
struct CoverageHeatmap {
    int width = 0;
    int height = 0;
    std::vector<double> values;

    double at(int row, int col) const { return values.at(static_cast<std::size_t>(row) * width + col); }
};

// Accumulates integer per-pixel coverage counts. Each rect is O(1) via a 2-D
// difference array; counts are materialized on demand.
class CoverageCounter {
public:
    CoverageCounter(int image_w, int image_h)
        : width_(image_w), height_(image_h),
          diff_(static_cast<std::size_t>(image_w + 1) * (image_h + 1), 0) {
        if (image_w < 1 || image_h < 1) throw ParameterError("image dimensions must be >= 1");
    }

    void add(const Rect& r) {
        require_inside(r, width_, height_);
        const int stride = width_ + 1;
        diff_[static_cast<std::size_t>(r.y) * stride + r.x] += 1;
        diff_[static_cast<std::size_t>(r.y) * stride + r.right()] -= 1;
        diff_[static_cast<std::size_t>(r.bottom()) * stride + r.x] -= 1;
        diff_[static_cast<std::size_t>(r.bottom()) * stride + r.right()] += 1;
        ++count_;
    }

    void merge(const CoverageCounter& other) {
        if (other.width_ != width_ || other.height_ != height_) throw ShapeError("coverage size mismatch");
        for (std::size_t i = 0; i < diff_.size(); ++i) diff_[i] += other.diff_[i];
        count_ += other.count_;
    }

    std::uint64_t rect_count() const noexcept { return count_; }

    std::vector<std::int64_t> counts() const {
        const int stride = width_ + 1;
        std::vector<std::int64_t> out(static_cast<std::size_t>(width_) * height_);
        std::vector<std::int64_t> row_acc(static_cast<std::size_t>(width_), 0);
        for (int y = 0; y < height_; ++y) {
            std::int64_t run = 0;
            for (int x = 0; x < width_; ++x) {
                run += diff_[static_cast<std::size_t>(y) * stride + x];
                row_acc[x] += run;
                out[static_cast<std::size_t>(y) * width_ + x] = row_acc[x];
            }
        }
        return out;
    }

    CoverageHeatmap heatmap() const {
        if (count_ == 0) throw EmptyInputError("coverage heatmap needs at least one rect");
        auto c = counts();
        const std::int64_t peak = *std::max_element(c.begin(), c.end());
        CoverageHeatmap hm{width_, height_, std::vector<double>(c.size())};
        for (std::size_t i = 0; i < c.size(); ++i) hm.values[i] = static_cast<double>(c[i]) / peak;
        return hm;
    }

private:
    int width_;
    int height_;
    std::vector<std::int64_t> diff_;
    std::uint64_t count_ = 0;
};

inline CoverageHeatmap coverage_heatmap(std::span<const Rect> rects, int image_w, int image_h) {
    if (rects.empty()) throw EmptyInputError("coverage heatmap needs at least one rect");
    CoverageCounter counter(image_w, image_h);
    for (const Rect& r : rects) counter.add(r);
    return counter.heatmap();
}

// Heatmap of n single crops, sharded like config_statistics.
inline CoverageHeatmap sample_coverage(std::uint64_t seed, int image_w, int image_h, const CropParams& params,
                                       std::uint64_t n_crops, unsigned workers = 1) {
    if (n_crops < 1) throw ParameterError("n_crops must be >= 1");
    params.validate();
    const std::uint64_t shards = (n_crops + detail::kShardSize - 1) / detail::kShardSize;
    std::vector<CoverageCounter> partial(shards, CoverageCounter(image_w, image_h));
    detail::for_each_shard(shards, workers, [&](std::uint64_t s) {
        Rng rng = make_rng(seed, {s});
        const std::uint64_t begin = s * detail::kShardSize;
        const std::uint64_t end = std::min(n_crops, begin + detail::kShardSize);
        for (std::uint64_t i = begin; i < end; ++i) partial[s].add(sample_crop(rng, image_w, image_h, params));
    });
    CoverageCounter total(image_w, image_h);
    for (const auto& p : partial) total.merge(p);
    return total.heatmap();
}

inline void write_heatmap_csv(std::ostream& os, const CoverageHeatmap& hm) {
    char buf[32];
    for (int row = 0; row < hm.height; ++row) {
        for (int col = 0; col < hm.width; ++col) {
            std::snprintf(buf, sizeof buf, "%.9g", hm.at(row, col));
            if (col) os << ',';
            os << buf;
        }
        os << '\n';
    }
}

// Binary 8-bit PGM, value = round(255 * normalized).
inline void write_heatmap_pgm(std::ostream& os, const CoverageHeatmap& hm) {
    os << "P5\n" << hm.width << ' ' << hm.height << "\n255\n";
    for (double v : hm.values) {
        const auto byte = static_cast<unsigned char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
        os.put(static_cast<char>(byte));
    }
}

}  // namespace batchcur
