#pragma once

// Batch curation: resample the instances of a contrastive batch until every
// similar pair is closer than every dissimilar pair, judged by the model in
// training. Curation stays off during an initial warm-up period so that
// distances mean something before they are used.

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "batchcur/error.hpp"
#include "batchcur/geometry.hpp"
#include "batchcur/image.hpp"
#include "batchcur/nn.hpp"
#include "batchcur/tensor.hpp"

namespace batchcur {

struct ViewProvenance {
    Rect rect;
    AugRecord aug;
    std::uint32_t draw = 0;  // how many times this slot has been (re)drawn

    friend bool operator==(const ViewProvenance&, const ViewProvenance&) = default;
};

// N source instances and their 2N views; views 2i and 2i+1 come from
// instance i and form its similar pair. Every cross-instance view pair is a
// dissimilar pair.
struct ViewBatch {
    std::vector<std::size_t> instances;
    Tensor<float> views;  // [2N, C, H, W]
    std::vector<ViewProvenance> provenance;

    std::size_t size() const noexcept { return instances.size(); }

    std::size_t view_stride() const {
        return views.shape.size() == 4 ? shape_size({views.dim(1), views.dim(2), views.dim(3)}) : 0;
    }

    void validate() const {
        if (views.shape.size() != 4) throw ShapeError("views must be [2N, C, H, W]");
        if (static_cast<std::size_t>(views.dim(0)) != 2 * instances.size())
            throw ShapeError("expected exactly two views per instance");
        if (provenance.size() != 2 * instances.size()) throw ShapeError("provenance must have one entry per view");
    }

    void validate(int image_w, int image_h) const {
        validate();
        for (const auto& p : provenance) require_inside(p.rect, image_w, image_h);
    }

    friend bool operator==(const ViewBatch&, const ViewBatch&) = default;
};

struct DistanceSummary {
    std::vector<double> m_s;  // per instance: distance between its two views
    Matrix<double> m_d;       // 2N x 2N view distances; only cross-instance entries are dissimilar pairs
    double d_s = 0.0;         // max(m_s)
    double d_d = 0.0;         // min over dissimilar pairs

    bool satisfied() const noexcept { return d_s < d_d; }
    double margin() const noexcept { return d_d - d_s; }
    static bool dissimilar(Eigen::Index a, Eigen::Index b) noexcept { return a / 2 != b / 2; }
};

// Cosine distances (1 - cos) over L2-normalized rows, accumulated in double
// and clamped to [0, 2].
inline DistanceSummary compute_distances(const EmbeddingMatrix& z) {
    const Eigen::Index m = z.rows();
    if (m % 2 != 0) throw ShapeError("expected 2N embedding rows");
    if (m / 2 < 2) throw InsufficientBatchError("curation needs at least two instances, got " + std::to_string(m / 2));

    const Matrix<double> u = z.cast<double>();
    DistanceSummary s;
    s.m_d = Matrix<double>::Zero(m, m);
    for (Eigen::Index a = 0; a < m; ++a)
        for (Eigen::Index b = a + 1; b < m; ++b) {
            const double d = std::clamp(1.0 - u.row(a).dot(u.row(b)), 0.0, 2.0);
            s.m_d(a, b) = s.m_d(b, a) = d;
        }
    s.m_s.resize(static_cast<std::size_t>(m / 2));
    for (Eigen::Index i = 0; i < m / 2; ++i) s.m_s[i] = s.m_d(2 * i, 2 * i + 1);
    s.d_s = *std::max_element(s.m_s.begin(), s.m_s.end());
    s.d_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < m; ++a)
        for (Eigen::Index b = a + 1; b < m; ++b)
            if (DistanceSummary::dissimilar(a, b)) s.d_d = std::min(s.d_d, s.m_d(a, b));
    return s;
}

// Instances to redraw when d_s < d_d fails: every instance whose own pair
// reaches d_d, plus, for every dissimilar pair at distance <= d_s, the member
// instance with the larger similar-pair distance (ties go to the lower
// index). Sorted and unique; never empty for a failing summary.
inline std::vector<std::size_t> violating_instances(const DistanceSummary& s) {
    const std::size_t n = s.m_s.size();
    std::vector<char> flag(n, 0);
    for (std::size_t i = 0; i < n; ++i)
        if (s.m_s[i] >= s.d_d) flag[i] = 1;
    const Eigen::Index m = s.m_d.rows();
    for (Eigen::Index a = 0; a < m; ++a)
        for (Eigen::Index b = a + 1; b < m; ++b) {
            if (!DistanceSummary::dissimilar(a, b) || s.m_d(a, b) > s.d_s) continue;
            const std::size_t p = static_cast<std::size_t>(a / 2), q = static_cast<std::size_t>(b / 2);
            const std::size_t pick = s.m_s[p] > s.m_s[q] ? p : s.m_s[q] > s.m_s[p] ? q : std::min(p, q);
            flag[pick] = 1;
        }
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n; ++i)
        if (flag[i]) out.push_back(i);
    return out;
}

struct CuratorConfig {
    // Curation is skipped while epoch < warmup. Unset means 20% of the run.
    std::optional<int> warmup_epochs;
    int max_rounds = 10;
    EmbeddingSpace space = EmbeddingSpace::Projection;

    int resolved_warmup(int total_epochs) const { return warmup_epochs.value_or(total_epochs / 5); }

    void validate() const {
        if (warmup_epochs && *warmup_epochs < 0) throw ParameterError("warmup_epochs must be >= 0");
        if (max_rounds < 1) throw ParameterError("max_rounds must be >= 1");
    }

    friend bool operator==(const CuratorConfig&, const CuratorConfig&) = default;
};

struct CurationReport {
    bool passthrough = false;  // warm-up: nothing was evaluated
    int rounds_used = 0;
    std::size_t resampled_instance_count = 0;  // summed over rounds
    bool satisfied = false;
    double final_margin = 0.0;
    double initial_d_s = 0.0, initial_d_d = 0.0;
    double final_d_s = 0.0, final_d_d = 0.0;
};

struct CurationResult {
    ViewBatch batch;
    CurationReport report;
};

// Maps a [V, C, H, W] view tensor to V embedding rows.
template <class E>
concept ViewEncoder = requires(E& e, const Tensor<float>& v) {
    { e(v) } -> std::convertible_to<EmbeddingMatrix>;
};

// Redraws both views (and provenance) of the given batch slots in place.
template <class R>
concept ViewResampler = requires(R& r, ViewBatch& b, std::span<const std::size_t> slots) { r(b, slots); };

inline auto model_encoder(EncoderModel<float>& model, EmbeddingSpace space) {
    return [&model, space](const Tensor<float>& views) -> EmbeddingMatrix {
        auto out = model.forward(views);
        return space == EmbeddingSpace::Projection ? std::move(out.z) : std::move(out.h);
    };
}

namespace detail {

inline Tensor<float> gather_instance_views(const ViewBatch& batch, std::span<const std::size_t> slots) {
    const std::size_t stride = batch.view_stride();
    std::vector<int> shape = batch.views.shape;
    shape[0] = static_cast<int>(2 * slots.size());
    Tensor<float> out(shape);
    for (std::size_t k = 0; k < slots.size(); ++k)
        std::copy_n(batch.views.data.begin() + 2 * slots[k] * stride, 2 * stride, out.data.begin() + 2 * k * stride);
    return out;
}

}  // namespace detail

// Algorithm: encode every view; accept when d_s < d_d. Otherwise redraw the
// violating instances, re-encode only their views and test again, for at most
// max_rounds rounds. If no round succeeds, the round with the largest
// d_d - d_s margin (the input batch included) is returned unsatisfied.
// Before the warm-up ends the input is returned untouched; an unset
// warmup_epochs counts as zero here (callers resolve it against the run).
template <ViewEncoder Encoder, ViewResampler Resampler>
CurationResult curate_batch(const ViewBatch& batch, Encoder&& encode, int epoch, const CuratorConfig& config,
                            Resampler&& resample) {
    config.validate();
    batch.validate();
    CurationResult result{batch, {}};
    if (epoch < config.warmup_epochs.value_or(0)) {
        result.report.passthrough = true;
        return result;
    }
    if (batch.size() < 2)
        throw InsufficientBatchError("curation needs at least two instances, got " + std::to_string(batch.size()));

    ViewBatch current = batch;
    EmbeddingMatrix z = l2_normalize_rows<float>(encode(current.views));
    if (static_cast<std::size_t>(z.rows()) != 2 * batch.size()) throw ShapeError("encoder returned wrong row count");
    DistanceSummary summary = compute_distances(z);

    CurationReport& report = result.report;
    report.initial_d_s = summary.d_s;
    report.initial_d_d = summary.d_d;
    auto finish = [&](const DistanceSummary& s) {
        report.satisfied = s.satisfied();
        report.final_margin = s.margin();
        report.final_d_s = s.d_s;
        report.final_d_d = s.d_d;
    };
    if (summary.satisfied()) {
        finish(summary);
        return result;
    }

    ViewBatch best = current;
    DistanceSummary best_summary = summary;
    for (int round = 1; round <= config.max_rounds; ++round) {
        const std::vector<std::size_t> slots = violating_instances(summary);
        resample(current, std::span<const std::size_t>(slots));
        current.validate();
        if (current.instances != batch.instances) throw ShapeError("resampler must not change batch instances");
        report.resampled_instance_count += slots.size();
        report.rounds_used = round;

        const EmbeddingMatrix fresh = l2_normalize_rows<float>(encode(detail::gather_instance_views(current, slots)));
        if (static_cast<std::size_t>(fresh.rows()) != 2 * slots.size())
            throw ShapeError("encoder returned wrong row count");
        for (std::size_t k = 0; k < slots.size(); ++k) {
            z.row(2 * slots[k]) = fresh.row(2 * k);
            z.row(2 * slots[k] + 1) = fresh.row(2 * k + 1);
        }
        summary = compute_distances(z);
        if (summary.satisfied()) {
            result.batch = std::move(current);
            finish(summary);
            return result;
        }
        if (summary.margin() > best_summary.margin()) {
            best = current;
            best_summary = summary;
        }
    }
    result.batch = std::move(best);
    finish(best_summary);
    return result;
}

}  // namespace batchcur
