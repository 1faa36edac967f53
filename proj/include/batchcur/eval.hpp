#pragma once

// Frozen-representation evaluation: weighted K-NN voting and a linear probe.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "batchcur/data.hpp"
#include "batchcur/error.hpp"
#include "batchcur/image.hpp"
#include "batchcur/nn.hpp"
#include "batchcur/random.hpp"
#include "batchcur/tensor.hpp"

namespace batchcur {

struct EvalConfig {
    int k = 200;
    double knn_temperature = 0.5;
    int probe_epochs = 100;
    double probe_lr = 0.1;
    int probe_batch = 256;
    EmbeddingSpace space = EmbeddingSpace::Representation;

    void validate() const {
        if (k < 1) throw ParameterError("k must be >= 1");
        if (!(knn_temperature > 0.0)) throw ParameterError("knn_temperature must be > 0");
        if (probe_epochs < 1) throw ParameterError("probe_epochs must be >= 1");
        if (!(probe_lr >= 0.0)) throw ParameterError("probe_lr must be >= 0");
        if (probe_batch < 1) throw ParameterError("probe_batch must be >= 1");
    }

    friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct EmbeddingBank {
    EmbeddingMatrix embeddings;
    EmbeddingMatrix normalized;
    std::vector<int> labels;
    int num_classes = 0;

    static EmbeddingBank build(EmbeddingMatrix embeddings, std::vector<int> labels, int num_classes) {
        if (embeddings.rows() == 0) throw EmptyInputError("embedding bank is empty");
        if (static_cast<std::size_t>(embeddings.rows()) != labels.size())
            throw ShapeError("one label per embedding row required");
        EmbeddingBank bank;
        bank.normalized = l2_normalize_rows(embeddings);
        bank.embeddings = std::move(embeddings);
        bank.labels = std::move(labels);
        bank.num_classes = num_classes;
        for (int l : bank.labels)
            if (l < 0 || l >= num_classes) throw ShapeError("bank label out of range");
        return bank;
    }

    std::size_t size() const noexcept { return labels.size(); }
};

// Cosine similarity in double of every bank row against the query.
inline std::vector<double> bank_similarities(const EmbeddingBank& bank, std::span<const float> query) {
    if (static_cast<Eigen::Index>(query.size()) != bank.normalized.cols())
        throw ShapeError("query dimension does not match bank");
    double qn = 0.0;
    for (float v : query) qn += static_cast<double>(v) * v;
    qn = std::sqrt(qn);
    if (!(qn > 0.0)) throw NumericError("zero-norm query");
    std::vector<double> sims(bank.size());
    for (std::size_t i = 0; i < bank.size(); ++i) {
        const float* row = bank.normalized.row(static_cast<Eigen::Index>(i)).data();
        double dot = 0.0;
        for (std::size_t d = 0; d < query.size(); ++d) dot += static_cast<double>(row[d]) * query[d];
        sims[i] = dot / qn;
    }
    return sims;
}

// Top-k by cosine similarity (ties: lower bank index first); each neighbor
// votes exp(sim / knn_temperature) for its label; the highest score wins with
// ties going to the lower label.
inline int knn_classify(const EmbeddingBank& bank, std::span<const float> query, const EvalConfig& cfg) {
    if (bank.size() == 0) throw EmptyInputError("embedding bank is empty");
    if (cfg.k < 1 || static_cast<std::size_t>(cfg.k) > bank.size())
        throw ParameterError("k must be in [1, bank size]");
    const std::vector<double> sims = bank_similarities(bank, query);
    std::vector<std::size_t> order(bank.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto closer = [&](std::size_t a, std::size_t b) { return sims[a] > sims[b] || (sims[a] == sims[b] && a < b); };
    std::partial_sort(order.begin(), order.begin() + cfg.k, order.end(), closer);

    std::vector<double> score(static_cast<std::size_t>(bank.num_classes), 0.0);
    for (int r = 0; r < cfg.k; ++r) score[bank.labels[order[r]]] += std::exp(sims[order[r]] / cfg.knn_temperature);
    int best = -1;
    for (int c = 0; c < bank.num_classes; ++c)
        if (score[c] > 0.0 && (best < 0 || score[c] > score[best])) best = c;
    return best;
}

inline double knn_accuracy(const EmbeddingBank& bank, const EmbeddingMatrix& queries, std::span<const int> labels,
                           const EvalConfig& cfg) {
    if (static_cast<std::size_t>(queries.rows()) != labels.size()) throw ShapeError("one label per query required");
    if (labels.empty()) throw EmptyInputError("no test queries");
    std::size_t correct = 0;
    std::vector<float> q(static_cast<std::size_t>(queries.cols()));
    for (Eigen::Index i = 0; i < queries.rows(); ++i) {
        std::copy_n(queries.row(i).data(), q.size(), q.begin());
        if (knn_classify(bank, q, cfg) == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

// Encodes whole images (resized to input_size when they differ) in chunks.
inline EmbeddingMatrix embed_images(EncoderModel<float>& model, const std::vector<Image>& images, int input_size,
                                    EmbeddingSpace space, std::size_t chunk = 256) {
    if (images.empty()) throw EmptyInputError("no images to embed");
    const int C = images.front().channels;
    const std::size_t stride = static_cast<std::size_t>(C) * input_size * input_size;
    const int dim = space == EmbeddingSpace::Projection ? model.config().proj_dim : model.config().rep_dim;
    EmbeddingMatrix out(static_cast<Eigen::Index>(images.size()), dim);
    for (std::size_t begin = 0; begin < images.size(); begin += chunk) {
        const std::size_t end = std::min(images.size(), begin + chunk);
        Tensor<float> views({static_cast<int>(end - begin), C, input_size, input_size});
        for (std::size_t i = begin; i < end; ++i) {
            const Image& img = images[i];
            const bool same = img.width == input_size && img.height == input_size;
            const Image resized = same ? Image{} : extract_and_resize(img, Rect{0, 0, img.width, img.height}, input_size);
            const Image& src = same ? img : resized;
            std::copy(src.data.begin(), src.data.end(), views.data.begin() + (i - begin) * stride);
        }
        auto result = model.forward(views);
        out.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin)) =
            space == EmbeddingSpace::Projection ? result.z : result.h;
    }
    return out;
}

// Builds the bank from the train set's frozen embeddings and classifies the
// test set.
inline double knn_accuracy(EncoderModel<float>& model, const LabeledImageSet& train, const LabeledImageSet& test,
                           const EvalConfig& cfg, int input_size) {
    cfg.validate();
    auto bank = EmbeddingBank::build(embed_images(model, train.images, input_size, cfg.space), train.labels,
                                     train.num_classes);
    return knn_accuracy(bank, embed_images(model, test.images, input_size, cfg.space), test.labels, cfg);
}

// Softmax regression on standardized frozen features, plain SGD with cosine
// decay per epoch. Returns the best test accuracy over epochs.
inline double linear_probe(const EmbeddingMatrix& train_x, std::span<const int> train_y, const EmbeddingMatrix& test_x,
                           std::span<const int> test_y, int num_classes, const EvalConfig& cfg,
                           std::uint64_t seed = 0) {
    cfg.validate();
    if (train_x.rows() == 0 || test_x.rows() == 0) throw EmptyInputError("linear probe needs train and test data");
    if (static_cast<std::size_t>(train_x.rows()) != train_y.size() ||
        static_cast<std::size_t>(test_x.rows()) != test_y.size())
        throw ShapeError("one label per feature row required");
    if (train_x.cols() != test_x.cols()) throw ShapeError("train/test feature dimensions differ");

    const Eigen::Index D = train_x.cols();
    Matrix<double> xtr = train_x.cast<double>();
    Matrix<double> xte = test_x.cast<double>();
    const Eigen::RowVectorXd mean = xtr.colwise().mean();
    Eigen::RowVectorXd sd = ((xtr.rowwise() - mean).array().square().colwise().mean()).sqrt();
    sd = sd.cwiseMax(1e-6);
    xtr = (xtr.rowwise() - mean).array().rowwise() / sd.array();
    xte = (xte.rowwise() - mean).array().rowwise() / sd.array();

    Matrix<double> W = Matrix<double>::Zero(D, num_classes);
    Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(num_classes);
    auto accuracy = [&]() {
        const Matrix<double> logits = (xte * W).rowwise() + b;
        std::size_t correct = 0;
        for (Eigen::Index i = 0; i < logits.rows(); ++i) {
            Eigen::Index arg;
            logits.row(i).maxCoeff(&arg);
            if (arg == test_y[i]) ++correct;
        }
        return static_cast<double>(correct) / static_cast<double>(test_y.size());
    };

    const std::size_t n = train_y.size();
    std::vector<std::size_t> order(n);
    double best = 0.0;
    for (int epoch = 0; epoch < cfg.probe_epochs; ++epoch) {
        const double lr = cfg.probe_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / cfg.probe_epochs));
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng = make_rng(seed, {0x70726f6265ULL, static_cast<std::uint64_t>(epoch)});
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += cfg.probe_batch) {
            const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.probe_batch));
            const Eigen::Index m = static_cast<Eigen::Index>(end - start);
            Matrix<double> xb(m, D);
            for (Eigen::Index r = 0; r < m; ++r) xb.row(r) = xtr.row(static_cast<Eigen::Index>(order[start + r]));
            Matrix<double> p = (xb * W).rowwise() + b;
            for (Eigen::Index r = 0; r < m; ++r) {
                const double peak = p.row(r).maxCoeff();
                p.row(r) = (p.row(r).array() - peak).exp();
                p.row(r) /= p.row(r).sum();
                p(r, train_y[order[start + r]]) -= 1.0;
            }
            p /= static_cast<double>(m);
            W.noalias() -= lr * (xb.transpose() * p);
            b -= lr * p.colwise().sum();
        }
        best = std::max(best, accuracy());
    }
    return best;
}

inline double linear_probe(EncoderModel<float>& model, const LabeledImageSet& train, const LabeledImageSet& test,
                           const EvalConfig& cfg, int input_size, std::uint64_t seed = 0) {
    return linear_probe(embed_images(model, train.images, input_size, cfg.space), train.labels,
                        embed_images(model, test.images, input_size, cfg.space), test.labels, train.num_classes, cfg,
                        seed);
}

}  // namespace batchcur
