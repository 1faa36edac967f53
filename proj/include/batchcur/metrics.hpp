#pragma once

// Machine-readable run artifacts: JSONL metric streams, the summary CSV and
// the configuration-statistics JSON. None of these carry timestamps; wall-clock
// data lives only in meta.json so the others are reproducible byte for byte.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "batchcur/curation.hpp"
#include "batchcur/error.hpp"
#include "batchcur/geometry.hpp"

namespace batchcur {

class JsonlWriter {
public:
    explicit JsonlWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::trunc) {
        if (!out_) throw IoError("cannot write " + path.string());
    }

    void write(const nlohmann::ordered_json& record) {
        out_ << record.dump() << '\n';
        out_.flush();
        if (!out_) throw IoError("failed writing " + path_.string());
    }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

inline std::vector<nlohmann::ordered_json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<nlohmann::ordered_json> records;
    std::string line;
    std::size_t index = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            records.push_back(nlohmann::ordered_json::parse(line));
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError(path.string(), index, e.what());
        }
        ++index;
    }
    return records;
}

// Curation activity aggregated over one epoch.
struct EpochCuration {
    std::size_t batches = 0;
    std::size_t satisfied = 0;
    std::size_t rounds = 0;
    std::size_t resampled = 0;

    void add(const CurationReport& r) {
        ++batches;
        satisfied += r.satisfied ? 1 : 0;
        rounds += static_cast<std::size_t>(r.rounds_used);
        resampled += r.resampled_instance_count;
    }
};

struct EpochMetrics {
    int epoch = 0;
    double loss = 0.0;  // mean over the epoch's steps
    std::optional<double> knn_acc;
    std::optional<EpochCuration> curation;  // absent during warm-up or without curation
};

inline nlohmann::ordered_json to_json(const EpochMetrics& m) {
    nlohmann::ordered_json j;
    j["epoch"] = m.epoch;
    j["loss"] = m.loss;
    if (m.knn_acc) j["knn_acc"] = *m.knn_acc;
    if (m.curation) {
        const auto& c = *m.curation;
        j["curation"] = {{"batches", c.batches},
                         {"satisfied", c.satisfied},
                         {"rounds", c.rounds},
                         {"resampled", c.resampled}};
    }
    return j;
}

inline nlohmann::ordered_json curation_step_record(int epoch, std::size_t step, const CurationReport& r) {
    return {{"epoch", epoch},
            {"step", step},
            {"rounds_used", r.rounds_used},
            {"resampled", r.resampled_instance_count},
            {"satisfied", r.satisfied},
            {"margin", r.final_margin}};
}

inline nlohmann::ordered_json to_json(const ConfigStats& s) {
    return {{"n_samples", s.n_samples},
            {"freq_global_local", s.freq_global_local},
            {"freq_adjacent", s.freq_adjacent},
            {"freq_intersection", s.freq_intersection},
            {"mean_area_fraction", s.mean_area_fraction}};
}

struct SummaryRow {
    std::string model_id;
    std::string regime;
    bool curated = false;
    double knn_acc = 0.0;
    double linear_acc = 0.0;
    double mean_area_fraction = 0.0;
};

inline constexpr const char* kSummaryHeader = "model_id,regime,curated,knn_acc,linear_acc,mean_area_fraction";

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::string format_summary_row(const SummaryRow& r) {
    std::ostringstream os;
    os << csv_field(r.model_id) << ',' << csv_field(r.regime) << ',' << (r.curated ? "true" : "false") << ','
       << std::setprecision(6) << std::fixed << r.knn_acc << ',' << r.linear_acc << ',' << r.mean_area_fraction;
    return os.str();
}

// Appends one row, writing the header first when the file is new or empty.
inline void append_summary_csv(const std::filesystem::path& path, const SummaryRow& row) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError("cannot append to " + path.string());
    if (fresh) out << kSummaryHeader << '\n';
    out << format_summary_row(row) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

// The only artifact that records wall-clock time.
inline void write_meta(const std::filesystem::path& dir, const std::string& command, double elapsed_seconds) {
    write_json_file(dir / "meta.json",
                    {{"command", command}, {"timestamp", utc_timestamp()}, {"elapsed_seconds", elapsed_seconds}});
}

}  // namespace batchcur
