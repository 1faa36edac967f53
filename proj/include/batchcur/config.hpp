#pragma once

// Declarative run configuration and its JSON form. Unknown keys are rejected
// by their dotted path; saving writes every field, so a saved file is fully
// explicit. `curation: null` disables curation and `warmup_epochs: null`
// means 20% of the epochs.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "batchcur/curation.hpp"
#include "batchcur/data.hpp"
#include "batchcur/error.hpp"
#include "batchcur/eval.hpp"
#include "batchcur/geometry.hpp"
#include "batchcur/image.hpp"
#include "batchcur/nn.hpp"
#include "batchcur/optim.hpp"

namespace batchcur {

using json = nlohmann::ordered_json;

struct DatasetConfig {
    std::string kind = "synthetic";  // "synthetic" or "cifar10"
    std::string path;                // CIFAR-10 directory
    int num_classes = 10;
    int per_class = 500;
    int test_per_class = 100;
    std::uint64_t seed = 0;

    friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct TrainConfig {
    int batch_size = 128;
    int epochs = 500;
    double temperature = 0.5;
    SgdConfig sgd{};
    int eval_every = 10;  // K-NN evaluation period in epochs; the last epoch is always evaluated
    SamplingRegime regime{};
    AugConfig augment{};

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "runs/latest";
    DatasetConfig dataset{};
    ModelConfig model{};
    TrainConfig train{};
    std::optional<CuratorConfig> curation;
    EvalConfig eval{};

    void validate() const;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

inline void RunConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) { throw ConfigError(field + ": " + why); };
    if (dataset.kind != "synthetic" && dataset.kind != "cifar10")
        fail("dataset.kind", "must be \"synthetic\" or \"cifar10\"");
    if (dataset.kind == "cifar10" && dataset.path.empty()) fail("dataset.path", "required for cifar10");
    if (dataset.num_classes < 1) fail("dataset.num_classes", "must be >= 1");
    if (dataset.per_class < 1) fail("dataset.per_class", "must be >= 1");
    if (dataset.test_per_class < 1) fail("dataset.test_per_class", "must be >= 1");
    if (!(train.temperature > 0.0)) fail("train.temperature", "must be > 0");
    if (train.batch_size < 2) fail("train.batch_size", "must be >= 2");
    if (train.epochs < 1) fail("train.epochs", "must be >= 1");
    if (train.eval_every < 1) fail("train.eval_every", "must be >= 1");
    if (!(train.sgd.learning_rate >= 0.0)) fail("train.learning_rate", "must be >= 0");
    if (!(train.sgd.momentum >= 0.0 && train.sgd.momentum < 1.0)) fail("train.momentum", "must be in [0, 1)");
    if (!(train.sgd.weight_decay >= 0.0)) fail("train.weight_decay", "must be >= 0");
    const AugConfig& a = train.augment;
    for (auto [name, v] : {std::pair{"flip_prob", a.flip_prob}, {"grayscale_prob", a.grayscale_prob}})
        if (!(v >= 0.0 && v <= 1.0)) fail(std::string("augment.") + name, "must be in [0, 1]");
    for (auto [name, v] : {std::pair{"brightness", a.brightness}, {"contrast", a.contrast}, {"saturation", a.saturation}})
        if (!(v >= 0.0)) fail(std::string("augment.") + name, "must be >= 0");
    try {
        train.regime.validate();
    } catch (const ParameterError& e) {
        fail("crop", e.what());
    }
    try {
        model.validate();
    } catch (const ParameterError& e) {
        fail("model", e.what());
    }
    if (curation) {
        if (curation->warmup_epochs && *curation->warmup_epochs < 0) fail("curation.warmup_epochs", "must be >= 0");
        if (curation->max_rounds < 1) fail("curation.max_rounds", "must be >= 1");
    }
    try {
        eval.validate();
    } catch (const ParameterError& e) {
        fail("eval", e.what());
    }
}

namespace detail {

// Reads fields from one JSON object, remembering which keys were consumed so
// leftovers can be reported.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where("") + ": expected an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->template get<T>();
        } catch (const json::exception&) {
            throw ConfigError(where(key) + ": wrong type");
        }
    }

    template <class T>
    void get_optional(const char* key, std::optional<T>& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        if (it->is_null()) {
            out.reset();
            return;
        }
        T v{};
        try {
            v = it->template get<T>();
        } catch (const json::exception&) {
            throw ConfigError(where(key) + ": wrong type");
        }
        out = v;
    }

    template <class Parse, class T>
    void get_enum(const char* key, T& out, Parse parse) {
        std::string s(to_string(out));
        get(key, s);
        auto v = parse(s);
        if (!v) throw ConfigError(where(key) + ": unknown value \"" + s + "\"");
        out = *v;
    }

    const json* child(const char* key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string where(const std::string& key) const {
        if (key.empty()) return path_.empty() ? "<root>" : path_;
        return path_.empty() ? key : path_ + "." + key;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError("unknown key \"" + where(it.key()) + "\"");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

}  // namespace detail

inline json to_json(const RunConfig& c) {
    const auto& r = c.train.regime;
    json j;
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    j["dataset"] = {{"kind", c.dataset.kind},
                    {"path", c.dataset.path},
                    {"num_classes", c.dataset.num_classes},
                    {"per_class", c.dataset.per_class},
                    {"test_per_class", c.dataset.test_per_class},
                    {"seed", c.dataset.seed}};
    j["model"] = {{"in_channels", c.model.in_channels},
                  {"conv_channels", c.model.conv_channels},
                  {"rep_dim", c.model.rep_dim},
                  {"proj_hidden", c.model.proj_hidden},
                  {"proj_dim", c.model.proj_dim}};
    j["crop"] = {{"scale_lo", r.crop.scale_lo},
                 {"scale_hi", r.crop.scale_hi},
                 {"ratio_lo", r.crop.ratio_lo},
                 {"ratio_hi", r.crop.ratio_hi},
                 {"max_attempts", r.crop.max_attempts},
                 {"out_size", r.crop.out_size}};
    j["regime"] = {{"mode", to_string(r.mode)},
                   {"contact_rule", to_string(r.rule)},
                   {"rejection_budget", r.rejection_budget}};
    const auto& a = c.train.augment;
    j["augment"] = {{"flip_prob", a.flip_prob},
                    {"brightness", a.brightness},
                    {"contrast", a.contrast},
                    {"saturation", a.saturation},
                    {"grayscale_prob", a.grayscale_prob}};
    j["train"] = {{"batch_size", c.train.batch_size},
                  {"epochs", c.train.epochs},
                  {"temperature", c.train.temperature},
                  {"learning_rate", c.train.sgd.learning_rate},
                  {"momentum", c.train.sgd.momentum},
                  {"weight_decay", c.train.sgd.weight_decay},
                  {"eval_every", c.train.eval_every}};
    if (c.curation) {
        json cur;
        cur["warmup_epochs"] = c.curation->warmup_epochs ? json(*c.curation->warmup_epochs) : json(nullptr);
        cur["max_rounds"] = c.curation->max_rounds;
        cur["space"] = to_string(c.curation->space);
        j["curation"] = cur;
    } else {
        j["curation"] = nullptr;
    }
    j["eval"] = {{"k", c.eval.k},
                 {"knn_temperature", c.eval.knn_temperature},
                 {"probe_epochs", c.eval.probe_epochs},
                 {"probe_lr", c.eval.probe_lr},
                 {"probe_batch", c.eval.probe_batch},
                 {"space", to_string(c.eval.space)}};
    return j;
}

// Missing keys keep their defaults; validation runs on the result.
inline RunConfig config_from_json(const json& j) {
    RunConfig c;
    detail::ObjectReader root(j, "");
    root.get("seed", c.seed);
    root.get("output_dir", c.output_dir);
    if (const json* d = root.child("dataset")) {
        detail::ObjectReader r(*d, "dataset");
        r.get("kind", c.dataset.kind);
        r.get("path", c.dataset.path);
        r.get("num_classes", c.dataset.num_classes);
        r.get("per_class", c.dataset.per_class);
        r.get("test_per_class", c.dataset.test_per_class);
        r.get("seed", c.dataset.seed);
        r.finish();
    }
    if (const json* m = root.child("model")) {
        detail::ObjectReader r(*m, "model");
        r.get("in_channels", c.model.in_channels);
        r.get("conv_channels", c.model.conv_channels);
        r.get("rep_dim", c.model.rep_dim);
        r.get("proj_hidden", c.model.proj_hidden);
        r.get("proj_dim", c.model.proj_dim);
        r.finish();
    }
    auto& regime = c.train.regime;
    if (const json* cr = root.child("crop")) {
        detail::ObjectReader r(*cr, "crop");
        r.get("scale_lo", regime.crop.scale_lo);
        r.get("scale_hi", regime.crop.scale_hi);
        r.get("ratio_lo", regime.crop.ratio_lo);
        r.get("ratio_hi", regime.crop.ratio_hi);
        r.get("max_attempts", regime.crop.max_attempts);
        r.get("out_size", regime.crop.out_size);
        r.finish();
    }
    if (const json* rg = root.child("regime")) {
        detail::ObjectReader r(*rg, "regime");
        r.get_enum("mode", regime.mode, parse_regime_mode);
        r.get_enum("contact_rule", regime.rule, parse_contact_rule);
        r.get("rejection_budget", regime.rejection_budget);
        r.finish();
    }
    if (const json* au = root.child("augment")) {
        detail::ObjectReader r(*au, "augment");
        r.get("flip_prob", c.train.augment.flip_prob);
        r.get("brightness", c.train.augment.brightness);
        r.get("contrast", c.train.augment.contrast);
        r.get("saturation", c.train.augment.saturation);
        r.get("grayscale_prob", c.train.augment.grayscale_prob);
        r.finish();
    }
    if (const json* t = root.child("train")) {
        detail::ObjectReader r(*t, "train");
        r.get("batch_size", c.train.batch_size);
        r.get("epochs", c.train.epochs);
        r.get("temperature", c.train.temperature);
        r.get("learning_rate", c.train.sgd.learning_rate);
        r.get("momentum", c.train.sgd.momentum);
        r.get("weight_decay", c.train.sgd.weight_decay);
        r.get("eval_every", c.train.eval_every);
        r.finish();
    }
    if (const json* cu = root.child("curation"); cu && !cu->is_null()) {
        CuratorConfig cur;
        detail::ObjectReader r(*cu, "curation");
        r.get_optional("warmup_epochs", cur.warmup_epochs);
        r.get("max_rounds", cur.max_rounds);
        r.get_enum("space", cur.space, parse_embedding_space);
        r.finish();
        c.curation = cur;
    }
    if (const json* e = root.child("eval")) {
        detail::ObjectReader r(*e, "eval");
        r.get("k", c.eval.k);
        r.get("knn_temperature", c.eval.knn_temperature);
        r.get("probe_epochs", c.eval.probe_epochs);
        r.get("probe_lr", c.eval.probe_lr);
        r.get("probe_batch", c.eval.probe_batch);
        r.get_enum("space", c.eval.space, parse_embedding_space);
        r.finish();
    }
    root.finish();
    c.validate();
    return c;
}

inline RunConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        auto [line, col] = detail::line_column(text, e.byte);
        throw ConfigError("JSON parse error at line " + std::to_string(line) + ", column " + std::to_string(col) + ": " +
                          e.what());
    }
    return config_from_json(j);
}

inline std::string dump_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

inline void save_config(const RunConfig& c, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write config " + path.string());
    f << dump_config(c);
    if (!f) throw IoError("failed writing config " + path.string());
}

}  // namespace batchcur
