#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "batchcur/eval.hpp"

using namespace batchcur;

namespace {

EmbeddingMatrix gaussian_rows(Rng& rng, int rows, int cols) {
    std::normal_distribution<double> n(0.0, 1.0);
    EmbeddingMatrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(n(rng));
    return m;
}

std::vector<int> random_labels(Rng& rng, int count, int classes) {
    std::vector<int> out(count);
    for (int& l : out) l = uniform_int(rng, 0, classes - 1);
    return out;
}

// Full sort of explicitly computed cosine similarities, then weighted vote.
int knn_by_full_sort(const EmbeddingMatrix& bank, const std::vector<int>& labels, int classes,
                     const Eigen::RowVectorXf& q, int k, double t) {
    const Eigen::RowVectorXd qd = q.cast<double>();
    std::vector<std::pair<double, int>> sims;
    for (Eigen::Index i = 0; i < bank.rows(); ++i) {
        const Eigen::RowVectorXd b = bank.row(i).cast<double>();
        sims.emplace_back(b.dot(qd) / (b.norm() * qd.norm()), static_cast<int>(i));
    }
    std::sort(sims.begin(), sims.end(), [](auto& a, auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
    std::vector<double> score(classes, 0.0);
    for (int r = 0; r < k; ++r) score[labels[sims[r].second]] += std::exp(sims[r].first / t);
    return static_cast<int>(std::max_element(score.begin(), score.end()) - score.begin());
}

std::vector<float> row_vector(const EmbeddingMatrix& m, Eigen::Index i) {
    return {m.row(i).data(), m.row(i).data() + m.cols()};
}

EvalConfig knn_config(int k, double t = 0.5) {
    EvalConfig c;
    c.k = k;
    c.knn_temperature = t;
    return c;
}

}  // namespace

TEST(Knn, HandExample) {
    EmbeddingMatrix bank(3, 2);
    bank << 1.0f, 0.0f, 0.9f, 0.1f, 0.0f, 1.0f;
    const auto b = EmbeddingBank::build(bank, {0, 0, 1}, 2);
    const std::vector<float> near_x{1.0f, 0.05f}, near_y{0.1f, 1.0f};
    EXPECT_EQ(knn_classify(b, near_x, knn_config(1)), 0);
    EXPECT_EQ(knn_classify(b, near_y, knn_config(1)), 1);
    // With k = 3 two label-0 votes outweigh one label-1 vote for near_x.
    EXPECT_EQ(knn_classify(b, near_x, knn_config(3)), 0);
}

TEST(Knn, WeightedVoteCanOverruleMajority) {
    // Two weak votes for class 1 versus one exact match for class 0 at a low temperature.
    EmbeddingMatrix bank(3, 2);
    bank << 1.0f, 0.0f, 0.0f, 1.0f, 0.0f, 1.0f;
    const auto b = EmbeddingBank::build(bank, {0, 1, 1}, 2);
    const std::vector<float> q{1.0f, 0.0f};
    EXPECT_EQ(knn_classify(b, q, knn_config(3, 0.1)), 0);
    // Cosine 1 vs 0: e^{1/t} against 2 e^{0}; at t = 2, e^{0.5} < 2.
    EXPECT_EQ(knn_classify(b, q, knn_config(3, 2.0)), 1);
}

TEST(Knn, MatchesFullSortOracle) {
    Rng rng = make_rng(41, {});
    for (int trial = 0; trial < 300; ++trial) {
        const int n = 20 + trial % 50, d = 2 + trial % 6, classes = 2 + trial % 5;
        const auto bank = gaussian_rows(rng, n, d);
        const auto labels = random_labels(rng, n, classes);
        const auto q = gaussian_rows(rng, 1, d);
        const int k = 1 + trial % n;
        const double t = 0.1 + 0.05 * (trial % 20);
        const auto b = EmbeddingBank::build(bank, labels, classes);
        EXPECT_EQ(knn_classify(b, row_vector(q, 0), knn_config(k, t)),
                  knn_by_full_sort(bank, labels, classes, q.row(0), k, t))
            << "trial " << trial;
    }
}

TEST(Knn, InvariantToPositiveRescaling) {
    Rng rng = make_rng(42, {});
    for (int trial = 0; trial < 100; ++trial) {
        auto bank = gaussian_rows(rng, 40, 5);
        const auto labels = random_labels(rng, 40, 4);
        auto q = row_vector(gaussian_rows(rng, 1, 5), 0);
        const int before = knn_classify(EmbeddingBank::build(bank, labels, 4), q, knn_config(7));
        for (Eigen::Index i = 0; i < bank.rows(); ++i) bank.row(i) *= static_cast<float>(uniform(rng, 0.1, 10.0));
        for (float& v : q) v *= 3.5f;
        EXPECT_EQ(knn_classify(EmbeddingBank::build(bank, labels, 4), q, knn_config(7)), before);
    }
}

TEST(Knn, SelfRetrievalIsPerfect) {
    Rng rng = make_rng(43, {});
    const auto bank = gaussian_rows(rng, 300, 8);
    const auto labels = random_labels(rng, 300, 10);
    const auto b = EmbeddingBank::build(bank, labels, 10);
    EXPECT_DOUBLE_EQ(knn_accuracy(b, bank, labels, knn_config(1)), 1.0);
}

TEST(Knn, RandomEmbeddingsScoreNearChance) {
    Rng rng = make_rng(44, {});
    const auto bank = gaussian_rows(rng, 2000, 16);
    const auto queries = gaussian_rows(rng, 1000, 16);
    const auto b = EmbeddingBank::build(bank, random_labels(rng, 2000, 10), 10);
    const double acc = knn_accuracy(b, queries, random_labels(rng, 1000, 10), knn_config(200));
    EXPECT_GT(acc, 0.06);
    EXPECT_LT(acc, 0.14);
}

TEST(Knn, RejectsBadInputs) {
    EmbeddingMatrix bank(2, 2);
    bank << 1.0f, 0.0f, 0.0f, 1.0f;
    const auto b = EmbeddingBank::build(bank, {0, 1}, 2);
    const std::vector<float> q{1.0f, 0.0f}, wrong_dim{1.0f}, zero{0.0f, 0.0f};
    EXPECT_THROW(knn_classify(b, q, knn_config(3)), ParameterError);
    EXPECT_THROW(knn_classify(b, wrong_dim, knn_config(1)), ShapeError);
    EXPECT_THROW(knn_classify(b, zero, knn_config(1)), NumericError);
    EXPECT_THROW(EmbeddingBank::build(EmbeddingMatrix(0, 2), {}, 2), EmptyInputError);
    EXPECT_THROW(EmbeddingBank::build(bank, {0, 5}, 2), ShapeError);
}

TEST(LinearProbe, SeparableClustersReachFullAccuracy) {
    Rng rng = make_rng(45, {});
    const int classes = 4, per = 100, d = 6;
    auto make = [&](int count) {
        EmbeddingMatrix x(count, d);
        std::vector<int> y(count);
        std::normal_distribution<double> noise(0.0, 0.1);
        for (int i = 0; i < count; ++i) {
            y[i] = i % classes;
            for (int j = 0; j < d; ++j) x(i, j) = static_cast<float>((j == y[i] ? 3.0 : 0.0) + noise(rng));
        }
        return std::pair{x, y};
    };
    const auto [xtr, ytr] = make(classes * per);
    const auto [xte, yte] = make(classes * 25);
    EvalConfig cfg;
    cfg.probe_epochs = 20;
    EXPECT_DOUBLE_EQ(linear_probe(xtr, ytr, xte, yte, classes, cfg), 1.0);
}

TEST(LinearProbe, ShuffledLabelsScoreNearChance) {
    Rng rng = make_rng(46, {});
    const auto xtr = gaussian_rows(rng, 2000, 16);
    const auto xte = gaussian_rows(rng, 1000, 16);
    EvalConfig cfg;
    cfg.probe_epochs = 10;
    const double acc =
        linear_probe(xtr, random_labels(rng, 2000, 10), xte, random_labels(rng, 1000, 10), 10, cfg);
    // Best-over-epochs adds a small upward bias above 0.1.
    EXPECT_GT(acc, 0.06);
    EXPECT_LT(acc, 0.16);
}

TEST(LinearProbe, DeterministicForFixedSeed) {
    Rng rng = make_rng(47, {});
    const auto xtr = gaussian_rows(rng, 300, 8);
    const auto xte = gaussian_rows(rng, 100, 8);
    const auto ytr = random_labels(rng, 300, 3), yte = random_labels(rng, 100, 3);
    EvalConfig cfg;
    cfg.probe_epochs = 5;
    EXPECT_EQ(linear_probe(xtr, ytr, xte, yte, 3, cfg, 9), linear_probe(xtr, ytr, xte, yte, 3, cfg, 9));
}

TEST(LinearProbe, RejectsMismatchedInputs) {
    const EmbeddingMatrix a = EmbeddingMatrix::Ones(4, 3), b = EmbeddingMatrix::Ones(4, 2);
    const std::vector<int> y{0, 1, 0, 1}, short_y{0, 1};
    EvalConfig cfg;
    EXPECT_THROW(linear_probe(a, y, b, y, 2, cfg), ShapeError);
    EXPECT_THROW(linear_probe(a, short_y, a, y, 2, cfg), ShapeError);
    EXPECT_THROW(linear_probe(EmbeddingMatrix(0, 3), {}, a, y, 2, cfg), EmptyInputError);
}

TEST(ModelEvaluation, LeavesModelUntouchedAndIsRepeatable) {
    ModelConfig mc;
    mc.conv_channels = {4, 8};
    mc.rep_dim = mc.proj_hidden = mc.proj_dim = 16;
    EncoderModel<float> model(mc, 5);
    const auto train = make_synthetic_set({3, 20, 1, 32});
    const auto test = make_synthetic_set({3, 5, 2, 32});
    EvalConfig cfg;
    cfg.k = 10;
    cfg.probe_epochs = 3;
    const auto checksum = parameter_checksum(model);
    const double knn1 = knn_accuracy(model, train, test, cfg, 16);
    const double probe1 = linear_probe(model, train, test, cfg, 16);
    EXPECT_EQ(parameter_checksum(model), checksum);
    EXPECT_EQ(knn_accuracy(model, train, test, cfg, 16), knn1);
    EXPECT_EQ(linear_probe(model, train, test, cfg, 16), probe1);
    EXPECT_GE(knn1, 0.0);
    EXPECT_LE(knn1, 1.0);
}

TEST(ModelEvaluation, ChunkingDoesNotChangeEmbeddings) {
    ModelConfig mc;
    mc.conv_channels = {4};
    mc.rep_dim = mc.proj_hidden = mc.proj_dim = 8;
    EncoderModel<float> model(mc, 6);
    const auto set = make_synthetic_set({2, 7, 3, 16});
    const auto whole = embed_images(model, set.images, 16, EmbeddingSpace::Representation, 1000);
    const auto chunked = embed_images(model, set.images, 16, EmbeddingSpace::Representation, 3);
    EXPECT_LT((whole - chunked).cwiseAbs().maxCoeff(), 1e-5f);
}
