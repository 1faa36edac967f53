#pragma once

// Command-line front end. `run_cli` parses one subcommand, runs it and maps
// failures to exit codes: 0 success, 1 I/O or data error, 2 usage error,
// 3 numeric failure. Tables go to `out`; artifacts only ever go to files.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "batchcur/checkpoint.hpp"
#include "batchcur/config.hpp"
#include "batchcur/curation.hpp"
#include "batchcur/error.hpp"
#include "batchcur/eval.hpp"
#include "batchcur/geometry.hpp"
#include "batchcur/metrics.hpp"
#include "batchcur/training.hpp"

namespace batchcur {

enum ExitCode : int { kExitOk = 0, kExitData = 1, kExitUsage = 2, kExitNumeric = 3 };

inline constexpr const char* kOutDirEnv = "BATCHCUR_OUT_DIR";

namespace cli {

// Flag beats environment beats config file.
inline std::filesystem::path resolve_out_dir(const std::string& flag, const std::string& from_config) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
    return from_config;
}

// Relative artifact paths land in the environment's output directory when set.
inline std::filesystem::path resolve_artifact(const std::string& path) {
    std::filesystem::path p(path);
    if (p.is_relative())
        if (const char* env = std::getenv(kOutDirEnv); env && *env) return std::filesystem::path(env) / p;
    return p;
}

inline void ensure_parent(const std::filesystem::path& file) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
}

inline std::pair<double, double> parse_range(const std::string& text, const std::string& flag) {
    const auto comma = text.find(',');
    if (comma == std::string::npos) throw UsageError(flag + ": expected lo,hi");
    try {
        std::size_t used_lo = 0, used_hi = 0;
        const std::string lo_text = text.substr(0, comma), hi_text = text.substr(comma + 1);
        const double lo = std::stod(lo_text, &used_lo);
        const double hi = std::stod(hi_text, &used_hi);
        if (used_lo != lo_text.size() || used_hi != hi_text.size()) throw std::invalid_argument(text);
        return {lo, hi};
    } catch (const std::logic_error&) {
        throw UsageError(flag + ": cannot parse \"" + text + "\" as lo,hi");
    }
}

inline std::string percent(double fraction) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << 100.0 * fraction << "%";
    return os.str();
}

struct CropFlags {
    std::string scale;
    std::string ratio;

    void apply(CropParams& crop) const {
        if (!scale.empty()) std::tie(crop.scale_lo, crop.scale_hi) = parse_range(scale, "--scale");
        if (!ratio.empty()) std::tie(crop.ratio_lo, crop.ratio_hi) = parse_range(ratio, "--ratio");
        try {
            crop.validate();
        } catch (const ParameterError& e) {
            throw UsageError(e.what());
        }
    }
};

inline void add_crop_flags(CLI::App& cmd, CropFlags& f) {
    cmd.add_option("--scale", f.scale, "crop area range as a fraction of the image, lo,hi (default 0.08,1)");
    cmd.add_option("--ratio", f.ratio, "crop aspect ratio range, lo,hi (default 0.75,1.3333333)");
}

// ---- stats -----------------------------------------------------------------

struct StatsFlags {
    std::uint64_t samples = 1'000'000;
    int image_size = 32;
    std::string regime = "default";
    std::string contact_rule = "closed";
    std::uint64_t seed = 0;
    unsigned workers = 1;
    std::string out;
    CropFlags crop;
};

inline void print_stats_table(std::ostream& out, const ConfigStats& s) {
    out << std::left << std::setw(22) << "configuration" << "share\n"
        << std::setw(22) << "global-local" << percent(s.freq_global_local) << '\n'
        << std::setw(22) << "adjacent" << percent(s.freq_adjacent) << '\n'
        << std::setw(22) << "intersection" << percent(s.freq_intersection) << '\n'
        << std::setw(22) << "mean area fraction" << percent(s.mean_area_fraction) << '\n'
        << std::setw(22) << "samples" << s.n_samples << '\n'
        << std::right;
}

inline nlohmann::ordered_json stats_document(const StatsFlags& f, const SamplingRegime& regime, const ConfigStats& s) {
    return {{"settings",
             {{"samples", f.samples},
              {"image_size", f.image_size},
              {"regime", to_string(regime.mode)},
              {"contact_rule", to_string(regime.rule)},
              {"scale", {regime.crop.scale_lo, regime.crop.scale_hi}},
              {"ratio", {regime.crop.ratio_lo, regime.crop.ratio_hi}},
              {"seed", f.seed}}},
            {"stats", to_json(s)}};
}

inline void cmd_stats(const StatsFlags& f, std::ostream& out) {
    SamplingRegime regime;
    auto mode = parse_regime_mode(f.regime);
    if (!mode) throw UsageError("--regime: unknown value \"" + f.regime + "\"");
    auto rule = parse_contact_rule(f.contact_rule);
    if (!rule) throw UsageError("--contact-rule: unknown value \"" + f.contact_rule + "\"");
    regime.mode = *mode;
    regime.rule = *rule;
    f.crop.apply(regime.crop);
    const ConfigStats s = config_statistics(f.seed, f.image_size, f.image_size, regime, f.samples, f.workers);
    print_stats_table(out, s);
    if (!f.out.empty()) {
        const auto path = resolve_artifact(f.out);
        ensure_parent(path);
        write_json_file(path, stats_document(f, regime, s));
    }
}

// ---- heatmap ---------------------------------------------------------------

struct HeatmapFlags {
    std::uint64_t samples = 1'000'000;
    int image_size = 32;
    std::uint64_t seed = 0;
    unsigned workers = 1;
    std::string out_pgm;
    std::string out_csv;
    CropFlags crop;
};

inline void cmd_heatmap(const HeatmapFlags& f, std::ostream& out) {
    if (f.out_pgm.empty() && f.out_csv.empty()) throw UsageError("heatmap: give --out-pgm and/or --out-csv");
    CropParams crop;
    f.crop.apply(crop);
    const CoverageHeatmap hm = sample_coverage(f.seed, f.image_size, f.image_size, crop, f.samples, f.workers);
    auto write = [](const std::string& target, auto&& writer, std::ios::openmode mode) {
        const auto path = resolve_artifact(target);
        ensure_parent(path);
        std::ofstream os(path, mode | std::ios::trunc);
        if (!os) throw IoError("cannot write " + path.string());
        writer(os);
        if (!os) throw IoError("failed writing " + path.string());
    };
    if (!f.out_csv.empty()) write(f.out_csv, [&](std::ostream& os) { write_heatmap_csv(os, hm); }, std::ios::out);
    if (!f.out_pgm.empty())
        write(f.out_pgm, [&](std::ostream& os) { write_heatmap_pgm(os, hm); }, std::ios::out | std::ios::binary);
    const int c = f.image_size / 2, e = f.image_size - 1;
    out << std::fixed << std::setprecision(4) << "crops " << f.samples << ", center (" << c << "," << c
        << ") = " << hm.at(c, c) << ", corners = " << hm.at(0, 0) << " " << hm.at(0, e) << " " << hm.at(e, 0) << " "
        << hm.at(e, e) << '\n';
    out.unsetf(std::ios::floatfield);
}

// ---- train -----------------------------------------------------------------

struct TrainFlags {
    std::string config;
    bool curate = false;
    std::optional<int> warmup;
    std::optional<int> epochs;
    std::optional<std::uint64_t> seed;
    std::optional<int> batch_size;
    std::optional<int> eval_every;
    std::optional<std::string> regime;
    std::string out_dir;
};

inline RunConfig resolve_train_config(const TrainFlags& f) {
    RunConfig cfg = f.config.empty() ? RunConfig{} : load_config(f.config);
    if (f.epochs) cfg.train.epochs = *f.epochs;
    if (f.seed) cfg.seed = *f.seed;
    if (f.batch_size) cfg.train.batch_size = *f.batch_size;
    if (f.eval_every) cfg.train.eval_every = *f.eval_every;
    if (f.regime) {
        auto mode = parse_regime_mode(*f.regime);
        if (!mode) throw UsageError("--regime: unknown value \"" + *f.regime + "\"");
        cfg.train.regime.mode = *mode;
    }
    if (f.curate && !cfg.curation) cfg.curation = CuratorConfig{};
    if (f.warmup) {
        if (!cfg.curation) throw UsageError("--warmup needs --curate or a curation section in the config");
        cfg.curation->warmup_epochs = *f.warmup;
    }
    cfg.output_dir = resolve_out_dir(f.out_dir, cfg.output_dir).string();
    cfg.validate();
    return cfg;
}

inline void cmd_train(const TrainFlags& f, std::ostream& out) {
    const auto start = std::chrono::steady_clock::now();
    const RunConfig cfg = resolve_train_config(f);
    const std::filesystem::path dir = cfg.output_dir;
    std::filesystem::create_directories(dir);
    save_config(cfg, dir / "config.json");

    const DatasetPair data = load_datasets(cfg.dataset);
    JsonlWriter metrics(dir / "metrics.jsonl");
    std::optional<JsonlWriter> curation_log;
    if (cfg.curation) curation_log.emplace(dir / "curation.jsonl");

    TrainObserver observer;
    observer.on_step = [&](const StepRecord& r) {
        if (r.curation) curation_log->write(curation_step_record(r.epoch, r.step, *r.curation));
    };
    observer.on_epoch = [&](const EpochMetrics& m) {
        metrics.write(to_json(m));
        out << "epoch " << std::setw(4) << m.epoch << "  loss " << std::fixed << std::setprecision(4) << m.loss;
        if (m.knn_acc) out << "  knn " << *m.knn_acc;
        if (m.curation)
            out << "  curated " << m.curation->satisfied << "/" << m.curation->batches << " satisfied, "
                << m.curation->resampled << " resampled";
        out.unsetf(std::ios::floatfield);
        out << std::endl;
    };
    const TrainResult result = train(cfg, data, observer);
    save_checkpoint(result.model, cfg.train.regime.crop.out_size, dir / "model.ckpt");
    out << "final knn " << std::fixed << std::setprecision(4) << result.final_knn_acc;
    if (cfg.curation) out << ", satisfied batches " << percent(result.satisfied_fraction());
    out.unsetf(std::ios::floatfield);
    out << "\ncheckpoint " << (dir / "model.ckpt").string() << '\n';
    write_meta(dir, "train", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
}

// ---- eval ------------------------------------------------------------------

struct EvalFlags {
    std::string checkpoint;
    std::string config;
    std::string dataset;
    std::optional<int> k;
    std::optional<int> probe_epochs;
    std::string summary;
    std::string model_id;
    std::string out_dir;
    std::uint64_t area_samples = 100'000;
};

inline SummaryRow cmd_eval(const EvalFlags& f, std::ostream& out) {
    const std::filesystem::path ckpt_path(f.checkpoint);
    RunConfig cfg;
    if (!f.config.empty()) {
        cfg = load_config(f.config);
    } else if (auto beside = ckpt_path.parent_path() / "config.json"; std::filesystem::exists(beside)) {
        cfg = load_config(beside);
    }
    if (!f.dataset.empty()) {
        if (f.dataset == "synthetic") {
            cfg.dataset.kind = "synthetic";
        } else {
            cfg.dataset.kind = "cifar10";
            cfg.dataset.path = f.dataset;
        }
    }
    if (f.k) cfg.eval.k = *f.k;
    if (f.probe_epochs) cfg.eval.probe_epochs = *f.probe_epochs;
    try {
        cfg.eval.validate();
    } catch (const ParameterError& e) {
        throw UsageError(e.what());
    }

    Checkpoint ck = load_checkpoint(ckpt_path);
    const DatasetPair data = load_datasets(cfg.dataset);
    if (static_cast<std::size_t>(cfg.eval.k) > data.train.size())
        throw UsageError("--k " + std::to_string(cfg.eval.k) + " exceeds train set size " +
                         std::to_string(data.train.size()));

    SummaryRow row;
    row.model_id = f.model_id.empty() ? ckpt_path.stem().string() : f.model_id;
    if (row.model_id == "model" && ckpt_path.has_parent_path()) row.model_id = ckpt_path.parent_path().filename().string();
    row.regime = std::string(to_string(cfg.train.regime.mode));
    row.curated = cfg.curation.has_value();
    row.knn_acc = knn_accuracy(ck.model, data.train, data.test, cfg.eval, ck.input_size);
    row.linear_acc =
        linear_probe(ck.model, data.train, data.test, cfg.eval, ck.input_size, derive_seed(cfg.seed, {stream::kProbe}));
    const int side = data.train.images.front().width;
    row.mean_area_fraction =
        config_statistics(cfg.seed, side, side, cfg.train.regime, f.area_samples).mean_area_fraction;

    const std::filesystem::path dir = resolve_out_dir(f.out_dir, ckpt_path.parent_path().string());
    const std::filesystem::path summary = f.summary.empty() ? dir / "summary.csv" : resolve_artifact(f.summary);
    ensure_parent(summary);
    append_summary_csv(summary, row);
    out << std::fixed << std::setprecision(4) << "model " << row.model_id << "  knn_acc " << row.knn_acc
        << "  linear_acc " << row.linear_acc << "  mean_area_fraction " << row.mean_area_fraction << '\n';
    out.unsetf(std::ios::floatfield);
    out << "summary " << summary.string() << '\n';
    return row;
}

// ---- curate-demo -----------------------------------------------------------

struct CurateDemoFlags {
    std::string config;
    std::string checkpoint;
    int steps = 10;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
};

inline std::string format_distances(double d_s, double d_d) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6) << "d_s=" << d_s << " d_d=" << d_d << " margin=" << d_d - d_s;
    return os.str();
}

// One line per batch: the criterion before curation, what the loop did, and
// the criterion after it. A satisfied report restates "d_s < d_d".
inline void print_curation_report(std::ostream& out, std::size_t step, const CurationReport& r) {
    out << "batch " << step << "  before " << format_distances(r.initial_d_s, r.initial_d_d) << "  rounds_used "
        << r.rounds_used << "  resampled " << r.resampled_instance_count << "  after "
        << format_distances(r.final_d_s, r.final_d_d) << "  " << (r.satisfied ? "satisfied d_s < d_d" : "unsatisfied")
        << '\n';
}

inline std::vector<CurationReport> cmd_curate_demo(const CurateDemoFlags& f, std::ostream& out) {
    if (f.steps < 1) throw UsageError("--steps must be >= 1");
    RunConfig cfg = f.config.empty() ? RunConfig{} : load_config(f.config);
    if (f.seed) cfg.seed = *f.seed;
    CuratorConfig curator = cfg.curation.value_or(CuratorConfig{});
    curator.warmup_epochs = 0;
    const std::filesystem::path dir = resolve_out_dir(f.out_dir, cfg.output_dir);
    std::filesystem::create_directories(dir);
    save_config(cfg, dir / "config.json");

    const DatasetPair data = load_datasets(cfg.dataset);
    EncoderModel<float> model = init_model(cfg);
    if (!f.checkpoint.empty()) {
        Checkpoint ck = load_checkpoint(f.checkpoint);
        if (ck.input_size != cfg.train.regime.crop.out_size)
            throw ConfigError("crop.out_size: checkpoint expects " + std::to_string(ck.input_size));
        model = std::move(ck.model);
    }
    const auto B = static_cast<std::size_t>(cfg.train.batch_size);
    if (data.train.size() < B) throw ConfigError("train.batch_size: exceeds train set size");
    const ViewSampler sampler(data.train, cfg.train.regime, cfg.train.augment, derive_seed(cfg.seed, {stream::kDemo}));

    JsonlWriter log(dir / "curate_demo.jsonl");
    std::vector<CurationReport> reports;
    std::vector<std::size_t> order(data.train.size());
    for (int step = 0; step < f.steps; ++step) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng = make_rng(cfg.seed, {stream::kDemo, static_cast<std::uint64_t>(step)});
        std::shuffle(order.begin(), order.end(), rng);
        const auto s = static_cast<std::size_t>(step);
        ViewBatch batch = sampler.make_batch(std::span<const std::size_t>(order.data(), B), 0, s);
        auto result = curate_batch(batch, model_encoder(model, curator.space), 0, curator, sampler.resampler(0, s));
        print_curation_report(out, s, result.report);
        auto record = curation_step_record(0, s, result.report);
        record["initial_d_s"] = result.report.initial_d_s;
        record["initial_d_d"] = result.report.initial_d_d;
        record["final_d_s"] = result.report.final_d_s;
        record["final_d_d"] = result.report.final_d_d;
        log.write(record);
        reports.push_back(result.report);
    }
    return reports;
}

inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
    if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ConfigError*>(&e) ||
        dynamic_cast<const ParameterError*>(&e))
        return kExitUsage;
    return kExitData;
}

}  // namespace cli

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Crop-geometry statistics and curated contrastive training", "batchcur"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "batchcur 1.0.0");

    cli::StatsFlags stats;
    auto* c_stats = app.add_subcommand("stats", "Monte Carlo frequencies of crop-pair configurations");
    c_stats->add_option("--samples", stats.samples, "number of crop pairs")->check(CLI::PositiveNumber);
    c_stats->add_option("--image-size", stats.image_size, "image side length")->check(CLI::PositiveNumber);
    c_stats->add_option("--regime", stats.regime, "default | global-local | adjacent | intersection | equal");
    c_stats->add_option("--contact-rule", stats.contact_rule, "closed | pixel");
    c_stats->add_option("--seed", stats.seed);
    c_stats->add_option("--workers", stats.workers, "threads; results do not depend on it")->check(CLI::PositiveNumber);
    c_stats->add_option("--out", stats.out, "write the statistics as JSON");
    cli::add_crop_flags(*c_stats, stats.crop);

    cli::HeatmapFlags heat;
    auto* c_heat = app.add_subcommand("heatmap", "Normalized pixel coverage of random crops");
    c_heat->add_option("--samples", heat.samples, "number of crops")->check(CLI::PositiveNumber);
    c_heat->add_option("--image-size", heat.image_size, "image side length")->check(CLI::PositiveNumber);
    c_heat->add_option("--seed", heat.seed);
    c_heat->add_option("--workers", heat.workers)->check(CLI::PositiveNumber);
    c_heat->add_option("--out-pgm", heat.out_pgm, "binary 8-bit PGM");
    c_heat->add_option("--out-csv", heat.out_csv, "comma-separated values, one image row per line");
    cli::add_crop_flags(*c_heat, heat.crop);

    cli::TrainFlags tr;
    auto* c_train = app.add_subcommand("train", "Contrastive training with optional batch curation");
    c_train->add_option("--config", tr.config, "JSON run configuration");
    c_train->add_flag("--curate", tr.curate, "enable batch curation");
    c_train->add_option("--warmup", tr.warmup, "epochs before curation starts")->check(CLI::NonNegativeNumber);
    c_train->add_option("--epochs", tr.epochs)->check(CLI::PositiveNumber);
    c_train->add_option("--seed", tr.seed);
    c_train->add_option("--batch-size", tr.batch_size)->check(CLI::Range(2, 1 << 20));
    c_train->add_option("--eval-every", tr.eval_every)->check(CLI::PositiveNumber);
    c_train->add_option("--regime", tr.regime);
    c_train->add_option("--out-dir", tr.out_dir);

    cli::EvalFlags ev;
    auto* c_eval = app.add_subcommand("eval", "K-NN and linear-probe accuracy of a checkpoint");
    c_eval->add_option("--checkpoint", ev.checkpoint)->required();
    c_eval->add_option("--config", ev.config, "defaults to config.json beside the checkpoint");
    c_eval->add_option("--dataset", ev.dataset, "CIFAR-10 directory, or \"synthetic\"");
    c_eval->add_option("--k", ev.k)->check(CLI::PositiveNumber);
    c_eval->add_option("--probe-epochs", ev.probe_epochs)->check(CLI::PositiveNumber);
    c_eval->add_option("--summary", ev.summary, "summary CSV to append to");
    c_eval->add_option("--model-id", ev.model_id);
    c_eval->add_option("--out-dir", ev.out_dir);

    cli::CurateDemoFlags demo;
    auto* c_demo = app.add_subcommand("curate-demo", "Curate random batches and report each one");
    c_demo->add_option("--config", demo.config);
    c_demo->add_option("--checkpoint", demo.checkpoint);
    c_demo->add_option("--steps", demo.steps)->check(CLI::PositiveNumber);
    c_demo->add_option("--seed", demo.seed);
    c_demo->add_option("--out-dir", demo.out_dir);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*c_stats) cli::cmd_stats(stats, out);
        if (*c_heat) cli::cmd_heatmap(heat, out);
        if (*c_train) cli::cmd_train(tr, out);
        if (*c_eval) cli::cmd_eval(ev, out);
        if (*c_demo) cli::cmd_curate_demo(demo, out);
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const Error& e) {
        const int code = cli::exit_code_for(e);
        err << (code == kExitNumeric ? "numeric failure: " : "error: ") << e.what() << '\n';
        return code;
    }
    return kExitOk;
}

}  // namespace batchcur
