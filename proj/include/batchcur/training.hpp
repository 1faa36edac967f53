#pragma once

// Contrastive training loop: draw a batch of view pairs per the sampling
// regime, optionally curate it, take one SGD step, evaluate periodically.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "batchcur/config.hpp"
#include "batchcur/curation.hpp"
#include "batchcur/data.hpp"
#include "batchcur/error.hpp"
#include "batchcur/eval.hpp"
#include "batchcur/geometry.hpp"
#include "batchcur/image.hpp"
#include "batchcur/metrics.hpp"
#include "batchcur/nn.hpp"
#include "batchcur/optim.hpp"
#include "batchcur/random.hpp"

namespace batchcur {

// Seed-derivation tags; each stream gets its own namespace under the run seed.
namespace stream {
inline constexpr std::uint64_t kViews = 0x7669657773ULL;
inline constexpr std::uint64_t kShuffle = 0x73687566ULL;
inline constexpr std::uint64_t kInit = 0x696e6974ULL;
inline constexpr std::uint64_t kTestSet = 0x74657374ULL;
inline constexpr std::uint64_t kProbe = 0x70726f62ULL;
inline constexpr std::uint64_t kDemo = 0x64656d6fULL;
}  // namespace stream

struct DatasetPair {
    LabeledImageSet train;
    LabeledImageSet test;
};

inline DatasetPair load_datasets(const DatasetConfig& d) {
    if (d.kind == "cifar10") {
        auto [train, test] = load_cifar10(d.path);
        return {std::move(train), std::move(test)};
    }
    if (d.kind != "synthetic") throw ConfigError("dataset.kind: unknown value \"" + d.kind + "\"");
    DatasetPair out;
    out.train = make_synthetic_set({d.num_classes, d.per_class, d.seed, 32});
    out.test = make_synthetic_set({d.num_classes, d.test_per_class, derive_seed(d.seed, {stream::kTestSet}), 32});
    return out;
}

// Builds view pairs for batch slots. Every slot's randomness is keyed by
// (epoch, step, slot, draw), so a redraw never disturbs other slots and the
// result does not depend on the order slots are filled.
class ViewSampler {
public:
    ViewSampler(const LabeledImageSet& images, SamplingRegime regime, AugConfig augment, std::uint64_t seed)
        : images_(images), regime_(regime), augment_(augment), seed_(seed) {
        regime_.validate();
    }

    int out_size() const noexcept { return regime_.crop.out_size; }

    ViewBatch make_batch(std::span<const std::size_t> instances, int epoch, std::size_t step) const {
        if (instances.empty()) throw EmptyInputError("batch has no instances");
        ViewBatch batch;
        batch.instances.assign(instances.begin(), instances.end());
        const int S = out_size();
        batch.views = Tensor<float>({static_cast<int>(2 * instances.size()), channels(), S, S});
        batch.provenance.resize(2 * instances.size());
        for (std::size_t slot = 0; slot < instances.size(); ++slot) draw_slot(batch, slot, epoch, step, 0);
        return batch;
    }

    // Resampler for curate_batch: fresh crops and augmentations of the same
    // source images for the listed slots of the batch made at (epoch, step).
    auto resampler(int epoch, std::size_t step) const {
        return [this, epoch, step](ViewBatch& batch, std::span<const std::size_t> slots) {
            for (std::size_t slot : slots) draw_slot(batch, slot, epoch, step, batch.provenance.at(2 * slot).draw + 1);
        };
    }

private:
    int channels() const { return images_.images.front().channels; }

    void draw_slot(ViewBatch& batch, std::size_t slot, int epoch, std::size_t step, std::uint32_t draw) const {
        const Image& src = images_.images.at(batch.instances.at(slot));
        Rng rng = make_rng(seed_, {stream::kViews, static_cast<std::uint64_t>(epoch), step, slot, draw});
        const auto [a, b] = sample_pair(rng, src.width, src.height, regime_);
        const std::size_t stride = batch.view_stride();
        const Rect rects[2] = {a, b};
        for (int v = 0; v < 2; ++v) {
            ViewProvenance& prov = batch.provenance[2 * slot + v];
            prov.rect = rects[v];
            prov.draw = draw;
            const Image view = photometric_augment(rng, extract_and_resize(src, rects[v], out_size()), augment_, &prov.aug);
            std::copy(view.data.begin(), view.data.end(), batch.views.data.begin() + (2 * slot + v) * stride);
        }
    }

    const LabeledImageSet& images_;
    SamplingRegime regime_;
    AugConfig augment_;
    std::uint64_t seed_;
};

struct StepRecord {
    int epoch = 0;
    std::size_t step = 0;
    double loss = 0.0;
    std::optional<CurationReport> curation;  // set once curation is active
};

struct TrainObserver {
    std::function<void(const StepRecord&)> on_step;
    std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
    EncoderModel<float> model;
    std::vector<EpochMetrics> epochs;
    double final_knn_acc = 0.0;
    std::size_t curated_batches = 0;  // batches that went through curation after warm-up
    std::size_t satisfied_batches = 0;

    double satisfied_fraction() const {
        return curated_batches == 0 ? 0.0 : static_cast<double>(satisfied_batches) / curated_batches;
    }
};

inline EncoderModel<float> init_model(const RunConfig& cfg) {
    return EncoderModel<float>(cfg.model, derive_seed(cfg.seed, {stream::kInit}));
}

inline void check_eval_fits(const EvalConfig& eval, std::size_t bank_size) {
    if (static_cast<std::size_t>(eval.k) > bank_size)
        throw ConfigError("eval.k: " + std::to_string(eval.k) + " exceeds train set size " + std::to_string(bank_size));
}

// Runs cfg.train.epochs epochs. Each epoch shuffles the train set and drops
// the final partial batch. The learning rate follows a cosine schedule over
// all steps. K-NN accuracy is measured every eval_every epochs and after the
// last one.
inline TrainResult train(const RunConfig& cfg, const DatasetPair& data, const TrainObserver& observer = {},
                         std::optional<EncoderModel<float>> initial = std::nullopt) {
    cfg.validate();
    data.train.validate();
    const std::size_t n = data.train.size();
    const auto B = static_cast<std::size_t>(cfg.train.batch_size);
    if (n < B) throw ConfigError("train.batch_size: exceeds train set size " + std::to_string(n));
    check_eval_fits(cfg.eval, n);
    if (initial && initial->config() != cfg.model) throw ConfigError("model: checkpoint architecture differs");

    TrainResult result{initial ? std::move(*initial) : init_model(cfg), {}, 0.0, 0, 0};
    EncoderModel<float>& model = result.model;
    Sgd<float> optimizer(cfg.train.sgd);
    const ViewSampler sampler(data.train, cfg.train.regime, cfg.train.augment, cfg.seed);
    const int epochs = cfg.train.epochs;
    const std::size_t steps_per_epoch = n / B;
    const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(epochs);

    std::optional<CuratorConfig> curator = cfg.curation;
    if (curator) curator->warmup_epochs = curator->resolved_warmup(epochs);

    std::vector<std::size_t> order(n);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng = make_rng(cfg.seed, {stream::kShuffle, static_cast<std::uint64_t>(epoch)});
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        EpochMetrics metrics;
        metrics.epoch = epoch;
        double loss_sum = 0.0;
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            const std::span<const std::size_t> instances(order.data() + step * B, B);
            ViewBatch batch = sampler.make_batch(instances, epoch, step);
            StepRecord record{epoch, step, 0.0, std::nullopt};
            if (curator && epoch >= *curator->warmup_epochs) {
                auto curated = curate_batch(batch, model_encoder(model, curator->space), epoch, *curator,
                                            sampler.resampler(epoch, step));
                batch = std::move(curated.batch);
                record.curation = curated.report;
                if (!metrics.curation) metrics.curation.emplace();
                metrics.curation->add(curated.report);
                ++result.curated_batches;
                result.satisfied_batches += curated.report.satisfied ? 1 : 0;
            }
            const double lr = cosine_lr(cfg.train.sgd.learning_rate, static_cast<std::size_t>(epoch) * steps_per_epoch + step,
                                        total_steps);
            try {
                record.loss = train_step(model, optimizer, batch.views, static_cast<float>(cfg.train.temperature), lr);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step));
            }
            loss_sum += record.loss;
            if (observer.on_step) observer.on_step(record);
        }
        metrics.loss = loss_sum / static_cast<double>(steps_per_epoch);
        const bool last = epoch + 1 == epochs;
        if (last || (epoch + 1) % cfg.train.eval_every == 0) {
            metrics.knn_acc = knn_accuracy(model, data.train, data.test, cfg.eval, sampler.out_size());
            if (last) result.final_knn_acc = *metrics.knn_acc;
        }
        if (observer.on_epoch) observer.on_epoch(metrics);
        result.epochs.push_back(std::move(metrics));
    }
    return result;
}

}  // namespace batchcur
