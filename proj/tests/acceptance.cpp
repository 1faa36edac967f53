// Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
// if any selected criterion fails. Tolerances are fixed below.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "batchcur/cli.hpp"

using namespace batchcur;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

std::string pct(double fraction) { return fmt(100.0 * fraction, 2) + "%"; }

bool within(double value, double target, double tol) { return std::abs(value - target) <= tol; }

double seconds_since(std::chrono::steady_clock::time_point t) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

// ---- 1: configuration frequencies ------------------------------------------

Outcome configuration_frequencies() {
    constexpr double kIntersection = 0.8133, kIntersectionTol = 0.02;
    constexpr double kGlobalLocal = 0.1727, kGlobalLocalTol = 0.02;
    constexpr double kAdjacent = 0.014, kAdjacentTol = 0.005;
    constexpr double kMaxSeconds = 60.0;
    const auto start = std::chrono::steady_clock::now();
    const ConfigStats s = config_statistics(0, 32, 32, SamplingRegime{}, 1'000'000, 1);
    const double elapsed = seconds_since(start);
    const bool pass = within(s.freq_intersection, kIntersection, kIntersectionTol) &&
                      within(s.freq_global_local, kGlobalLocal, kGlobalLocalTol) &&
                      within(s.freq_adjacent, kAdjacent, kAdjacentTol) && elapsed < kMaxSeconds;
    return {pass, "intersection " + pct(s.freq_intersection) + ", global-local " + pct(s.freq_global_local) +
                      ", adjacent " + pct(s.freq_adjacent) + " in " + fmt(elapsed, 2) + " s single-threaded"};
}

// ---- 2: mean area fractions -------------------------------------------------

Outcome mean_area_fractions() {
    struct Case {
        const char* name;
        SamplingRegime regime;
        double target, tol;
        std::uint64_t samples;
    };
    auto mode = [](RegimeMode m) {
        SamplingRegime r;
        r.mode = m;
        return r;
    };
    const std::vector<Case> cases{
        {"default", SamplingRegime{}, 0.49, 0.03, 1'000'000},
        {"scale [0.5,1]", SamplingRegime::big_patches(), 0.70, 0.03, 1'000'000},
        {"scale [0.08,0.5]", SamplingRegime::small_patches(), 0.29, 0.02, 1'000'000},
        {"adjacent-only", mode(RegimeMode::AdjacentOnly), 0.17, 0.03, 200'000},
        {"global-local-only", mode(RegimeMode::GlobalLocalOnly), 0.51, 0.03, 200'000},
        {"equal-configuration", mode(RegimeMode::EqualConfiguration), 0.39, 0.04, 200'000},
    };
    bool pass = true;
    std::string detail;
    for (const auto& c : cases) {
        const double area = config_statistics(1, 32, 32, c.regime, c.samples, 4).mean_area_fraction;
        const bool ok = within(area, c.target, c.tol);
        pass = pass && ok;
        detail += std::string(detail.empty() ? "" : ", ") + c.name + " " + pct(area) + (ok ? "" : " (out of range)");
    }
    return {pass, detail};
}

// ---- 3: centre bias ---------------------------------------------------------

Outcome centre_bias() {
    const CoverageHeatmap hm = sample_coverage(0, 32, 32, CropParams{}, 1'000'000, 4);
    const double centre = hm.at(16, 16);
    bool pass = true;
    double max_corner = 0.0;
    for (auto [r, c] : {std::pair{0, 0}, {0, 31}, {31, 0}, {31, 31}}) {
        pass = pass && centre > hm.at(r, c);
        max_corner = std::max(max_corner, hm.at(r, c));
    }
    return {pass, "centre " + fmt(centre) + ", largest corner " + fmt(max_corner)};
}

// ---- 4: curation soundness --------------------------------------------------

Outcome curation_soundness() {
    constexpr int kBatches = 1000;
    Rng rng = make_rng(4, {});
    // Views carry their embedding directly; the stub encoder reads it back.
    auto encoder = [](const Tensor<float>& v) {
        const int d = v.dim(1);
        EmbeddingMatrix z(v.dim(0), d);
        for (int i = 0; i < v.dim(0); ++i)
            for (int j = 0; j < d; ++j) z(i, j) = v.data[static_cast<std::size_t>(i) * d + j];
        return z;
    };
    std::normal_distribution<double> normal(0.0, 1.0);
    int unsound = 0, over_budget = 0, passthrough_changed = 0, satisfied = 0;
    for (int t = 0; t < kBatches; ++t) {
        const int n = 2 + t % 15, d = 2 + t % 7;
        const double spread = uniform(rng, 0.05, 1.5);
        ViewBatch batch;
        batch.instances.resize(n);
        std::iota(batch.instances.begin(), batch.instances.end(), std::size_t{0});
        batch.views = Tensor<float>({2 * n, d, 1, 1});
        batch.provenance.resize(2 * n);
        auto draw_instance = [&](ViewBatch& b, std::size_t i) {
            std::vector<double> centre(d);
            for (double& c : centre) c = normal(rng);
            for (std::size_t v : {2 * i, 2 * i + 1})
                for (int j = 0; j < d; ++j)
                    b.views.data[v * d + j] = static_cast<float>(centre[j] + spread * normal(rng));
        };
        for (int i = 0; i < n; ++i) draw_instance(batch, i);
        CuratorConfig cfg;
        cfg.warmup_epochs = 5;
        cfg.max_rounds = 1 + t % 12;
        auto resampler = [&](ViewBatch& b, std::span<const std::size_t> slots) {
            for (std::size_t s : slots) draw_instance(b, s);
        };

        const auto warm = curate_batch(batch, encoder, 4, cfg, resampler);
        if (!(warm.batch == batch) || !warm.report.passthrough) ++passthrough_changed;

        const auto r = curate_batch(batch, encoder, 5, cfg, resampler);
        if (r.report.rounds_used > cfg.max_rounds) ++over_budget;
        if (r.report.satisfied) {
            ++satisfied;
            const auto check = compute_distances(l2_normalize_rows<float>(encoder(r.batch.views)));
            if (!(check.d_s < check.d_d)) ++unsound;
        }
    }
    const bool pass = unsound == 0 && over_budget == 0 && passthrough_changed == 0 && satisfied > 0;
    return {pass, std::to_string(kBatches) + " batches, " + std::to_string(satisfied) + " satisfied, " +
                      std::to_string(unsound) + " unsound, " + std::to_string(over_budget) + " over budget, " +
                      std::to_string(passthrough_changed) + " warm-up batches altered"};
}

// ---- 5: loss and gradient ---------------------------------------------------

double reference_loss(const Matrix<double>& z, double t) {
    const Eigen::Index m = z.rows();
    auto cosine = [&](Eigen::Index a, Eigen::Index b) { return z.row(a).dot(z.row(b)) / (z.row(a).norm() * z.row(b).norm()); };
    double total = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        double denom = 0.0;
        for (Eigen::Index k = 0; k < m; ++k)
            if (k != i) denom += std::exp(cosine(i, k) / t);
        total -= std::log(std::exp(cosine(i, i ^ 1) / t) / denom);
    }
    return total / static_cast<double>(m);
}

Outcome loss_correctness() {
    constexpr double kOracleTol = 1e-8, kGradRelTol = 1e-4, kGradAbsFloor = 1e-9, kStep = 1e-6, kLn3Tol = 1e-6;
    Rng rng = make_rng(5, {});
    double worst_oracle = 0.0, worst_rel = 0.0;
    bool grads_ok = true;
    for (int n : {2, 3, 4})
        for (int trial = 0; trial < 5; ++trial) {
            Matrix<double> z(2 * n, 6);
            for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = uniform(rng, -1.0, 1.0);
            const double t = 0.1 + 0.2 * trial;
            const auto r = nt_xent_loss(z, t);
            worst_oracle = std::max(worst_oracle, std::abs(r.loss - reference_loss(z, t)));
            for (Eigen::Index i = 0; i < z.size(); ++i) {
                const double saved = z.data()[i];
                z.data()[i] = saved + kStep;
                const double up = reference_loss(z, t);
                z.data()[i] = saved - kStep;
                const double down = reference_loss(z, t);
                z.data()[i] = saved;
                const double numeric = (up - down) / (2 * kStep), analytic = r.grad.data()[i];
                const double diff = std::abs(numeric - analytic);
                const double scale = std::max(std::abs(numeric), std::abs(analytic));
                // Entries near zero are judged by the absolute floor alone.
                if (scale > kGradAbsFloor / kGradRelTol) worst_rel = std::max(worst_rel, diff / scale);
                grads_ok = grads_ok && (diff <= kGradAbsFloor || diff <= kGradRelTol * scale);
            }
        }
    Matrix<double> one(2, 4);
    for (Eigen::Index i = 0; i < one.size(); ++i) one.data()[i] = uniform(rng, -1.0, 1.0);
    const double single = nt_xent_loss(one, 0.5).loss;
    const Matrix<double> same = Matrix<double>::Constant(4, 3, 0.7);
    const double identical = nt_xent_loss(same, 0.5).loss;
    const bool pass = worst_oracle <= kOracleTol && grads_ok && single == 0.0 &&
                      within(identical, std::log(3.0), kLn3Tol);
    std::ostringstream os;
    os << std::scientific << std::setprecision(2) << "oracle max error " << worst_oracle << ", gradient max rel error "
       << worst_rel << ", N=1 loss " << single << ", identical N=2 loss " << std::fixed << std::setprecision(9)
       << identical << " (ln 3 = " << std::log(3.0) << ")";
    return {pass, os.str()};
}

// ---- 6: oracle equivalences -------------------------------------------------

PairConfiguration classify_by_pixels(const Rect& a, const Rect& b) {
    std::size_t shared = 0;
    for (int y = a.y; y < a.bottom(); ++y)
        for (int x = a.x; x < a.right(); ++x)
            if (x >= b.x && x < b.right() && y >= b.y && y < b.bottom()) ++shared;
    const std::size_t area_a = static_cast<std::size_t>(a.w) * a.h, area_b = static_cast<std::size_t>(b.w) * b.h;
    if (shared == 0) return PairConfiguration::Adjacent;
    if (shared == area_a || shared == area_b) return PairConfiguration::GlobalLocal;
    return PairConfiguration::Intersection;
}

Outcome oracle_equivalences() {
    constexpr int kPairs = 10'000, kQueries = 100;
    Rng rng = make_rng(6, {});
    int pair_mismatch = 0;
    for (int i = 0; i < kPairs; ++i) {
        const int W = uniform_int(rng, 4, 40), H = uniform_int(rng, 4, 40);
        auto rect = [&] {
            const int w = uniform_int(rng, 1, W), h = uniform_int(rng, 1, H);
            return Rect{uniform_int(rng, 0, W - w), uniform_int(rng, 0, H - h), w, h};
        };
        const Rect a = rect(), b = rect();
        if (classify_pair(a, b, ContactRule::PixelSet) != classify_by_pixels(a, b)) ++pair_mismatch;
    }

    std::normal_distribution<double> normal(0.0, 1.0);
    int knn_mismatch = 0;
    const int n = 500, d = 16, classes = 10;
    EmbeddingMatrix bank(n, d);
    for (Eigen::Index i = 0; i < bank.size(); ++i) bank.data()[i] = static_cast<float>(normal(rng));
    std::vector<int> labels(n);
    for (int& l : labels) l = uniform_int(rng, 0, classes - 1);
    const auto b = EmbeddingBank::build(bank, labels, classes);
    for (int q = 0; q < kQueries; ++q) {
        std::vector<float> query(d);
        for (float& v : query) v = static_cast<float>(normal(rng));
        EvalConfig cfg;
        cfg.k = 1 + q * 4;
        // Full sort of double-precision cosine similarities.
        std::vector<std::pair<double, int>> sims;
        double qn = 0.0;
        for (float v : query) qn += static_cast<double>(v) * v;
        for (int i = 0; i < n; ++i) {
            double dot = 0.0, bn = 0.0;
            for (int j = 0; j < d; ++j) {
                dot += static_cast<double>(bank(i, j)) * query[j];
                bn += static_cast<double>(bank(i, j)) * bank(i, j);
            }
            sims.emplace_back(dot / std::sqrt(bn * qn), i);
        }
        std::sort(sims.begin(), sims.end(),
                  [](auto& x, auto& y) { return x.first > y.first || (x.first == y.first && x.second < y.second); });
        std::vector<double> score(classes, 0.0);
        for (int r = 0; r < cfg.k; ++r) score[labels[sims[r].second]] += std::exp(sims[r].first / cfg.knn_temperature);
        const int expected = static_cast<int>(std::max_element(score.begin(), score.end()) - score.begin());
        if (knn_classify(b, query, cfg) != expected) ++knn_mismatch;
    }
    return {pair_mismatch == 0 && knn_mismatch == 0,
            "classify_pair(pixel-set) disagrees on " + std::to_string(pair_mismatch) + " of " + std::to_string(kPairs) +
                " pairs, knn_classify disagrees on " + std::to_string(knn_mismatch) + " of " +
                std::to_string(kQueries) + " queries"};
}

// ---- 7: toy-scale training --------------------------------------------------

RunConfig toy_config() {
    RunConfig cfg;
    cfg.seed = 1;
    cfg.dataset.num_classes = 10;
    cfg.dataset.per_class = 500;
    cfg.dataset.test_per_class = 100;
    cfg.dataset.seed = 7;
    cfg.model.conv_channels = {8, 16, 32};
    cfg.train.regime.crop.out_size = 16;
    cfg.train.batch_size = 128;
    cfg.train.epochs = 50;
    cfg.train.eval_every = 10;
    return cfg;
}

Outcome toy_training() {
    constexpr double kBaselineKnn = 0.6, kSatisfied = 0.8, kKnnSlack = 0.05;
    constexpr int kWarmup = 10;
    RunConfig base = toy_config();
    const DatasetPair data = load_datasets(base.dataset);
    auto t0 = std::chrono::steady_clock::now();
    const TrainResult baseline = train(base, data);
    const double base_s = seconds_since(t0);

    RunConfig cur = base;
    cur.curation = CuratorConfig{};
    cur.curation->warmup_epochs = kWarmup;
    t0 = std::chrono::steady_clock::now();
    const TrainResult curated = train(cur, data);
    const double cur_s = seconds_since(t0);

    const bool base_ok = baseline.final_knn_acc > kBaselineKnn;
    const bool sat_ok = curated.satisfied_fraction() >= kSatisfied;
    const bool knn_ok = curated.final_knn_acc >= baseline.final_knn_acc - kKnnSlack;
    return {base_ok && sat_ok && knn_ok,
            "baseline knn " + fmt(baseline.final_knn_acc) + (base_ok ? "" : " (below 0.6)") + " in " +
                fmt(base_s, 0) + " s; curated knn " + fmt(curated.final_knn_acc) + (knn_ok ? "" : " (more than 5 pp below)") +
                ", " + std::to_string(curated.satisfied_batches) + "/" + std::to_string(curated.curated_batches) +
                " post-warm-up batches satisfied (" + pct(curated.satisfied_fraction()) + (sat_ok ? "" : ", below 80%") +
                ") in " + fmt(cur_s, 0) + " s"};
}

// ---- 8: determinism ---------------------------------------------------------

std::string read_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

int invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "batchcur");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream sink;
    return run_cli(static_cast<int>(argv.size()), argv.data(), sink, sink);
}

Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / "batchcur_acceptance_determinism";
    fs::remove_all(root);
    fs::create_directories(root);
    {
        std::ofstream(root / "cfg.json") << R"({
  "seed": 8,
  "dataset": {"num_classes": 4, "per_class": 24, "test_per_class": 6, "seed": 2},
  "model": {"conv_channels": [4, 8], "rep_dim": 16, "proj_hidden": 16, "proj_dim": 8},
  "crop": {"out_size": 16},
  "train": {"batch_size": 16, "epochs": 3, "eval_every": 1},
  "curation": {"warmup_epochs": 1, "max_rounds": 3},
  "eval": {"k": 10, "probe_epochs": 3}
})";
    }
    const std::string cfg = (root / "cfg.json").string();
    int failures = 0;
    for (const char* run : {"a", "b"}) {
        const fs::path d = root / run;
        failures += invoke({"stats", "--samples", "100000", "--seed", "3", "--out", (d / "stats.json").string()}) != 0;
        failures += invoke({"heatmap", "--samples", "100000", "--seed", "3", "--out-pgm", (d / "h.pgm").string(),
                            "--out-csv", (d / "h.csv").string()}) != 0;
        failures += invoke({"train", "--config", cfg, "--out-dir", (d / "train").string()}) != 0;
        failures += invoke({"eval", "--checkpoint", (d / "train" / "model.ckpt").string()}) != 0;
        failures += invoke({"curate-demo", "--config", cfg, "--steps", "3", "--out-dir", (d / "demo").string()}) != 0;
    }
    std::size_t compared = 0, differing = 0;
    std::string names;
    for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
        if (!entry.is_regular_file() || entry.path().filename() == "meta.json") continue;
        const fs::path other = root / "b" / fs::relative(entry.path(), root / "a");
        ++compared;
        std::string a = read_bytes(entry.path()), b = read_bytes(other);
        // The resolved config records its own output directory, which differs by construction.
        if (entry.path().filename() == "config.json") {
            auto strip = [](std::string s) {
                auto j = nlohmann::ordered_json::parse(s);
                j.erase("output_dir");
                return j.dump();
            };
            a = strip(a);
            b = strip(b);
        }
        if (!fs::exists(other) || a != b) {
            ++differing;
            names += " " + fs::relative(entry.path(), root / "a").string();
        }
    }
    fs::remove_all(root);
    return {failures == 0 && differing == 0 && compared >= 10,
            std::to_string(compared) + " artifacts compared across two runs of stats, heatmap, train, eval and "
                                       "curate-demo, " +
                std::to_string(differing) + " differ" + (names.empty() ? "" : " (" + names.substr(1) + ")") + ", " + std::to_string(failures) + " commands failed"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks"};
    int only = 0;
    app.add_option("--only", only, "run a single criterion (1-8)")->check(CLI::Range(1, 8));
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"configuration frequencies at 1e6 samples", configuration_frequencies},
        {"mean area fraction per regime", mean_area_fractions},
        {"heatmap centre exceeds corners", centre_bias},
        {"curation soundness over randomized stub batches", curation_soundness},
        {"NT-Xent loss and gradient against oracles", loss_correctness},
        {"classify_pair and knn_classify against brute force", oracle_equivalences},
        {"toy-scale baseline and curated training", toy_training},
        {"byte-identical artifacts for identical seeds", determinism},
    };
    bool all = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int number = static_cast<int>(i + 1);
        if (only != 0 && only != number) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        all = all && o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << number << ": " << criteria[i].first << " | "
                  << o.detail << std::endl;
    }
    return all ? 0 : 1;
}
