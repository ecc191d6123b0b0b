#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ntklab/errors.hpp"

namespace ntklab {

inline constexpr std::string_view kCodeVersion = "ntklab 1.0.0";

/// One experiment outcome, stored as one JSON object per line.
struct RunRecord {
    std::string kind;
    double sigma_w_sq = 0.0;
    double sigma_b_sq = 0.0;
    int depth = 0;
    int width = 0;
    std::string activation;
    double learning_rate = 0.0;
    std::int64_t steps = 0;
    std::uint64_t seed = 0;
    nlohmann::json stats = nlohmann::json::object();
    double wall_seconds = 0.0;
    std::string code_version{kCodeVersion};

    bool operator==(const RunRecord&) const = default;
};

inline void to_json(nlohmann::json& j, const RunRecord& r) {
    j = nlohmann::json{{"kind", r.kind},
                       {"sigma_w_sq", r.sigma_w_sq},
                       {"sigma_b_sq", r.sigma_b_sq},
                       {"depth", r.depth},
                       {"width", r.width},
                       {"activation", r.activation},
                       {"learning_rate", r.learning_rate},
                       {"steps", r.steps},
                       {"seed", r.seed},
                       {"stats", r.stats},
                       {"wall_seconds", r.wall_seconds},
                       {"code_version", r.code_version}};
}

inline void from_json(const nlohmann::json& j, RunRecord& r) {
    j.at("kind").get_to(r.kind);
    j.at("sigma_w_sq").get_to(r.sigma_w_sq);
    j.at("sigma_b_sq").get_to(r.sigma_b_sq);
    j.at("depth").get_to(r.depth);
    j.at("width").get_to(r.width);
    j.at("activation").get_to(r.activation);
    j.at("learning_rate").get_to(r.learning_rate);
    j.at("steps").get_to(r.steps);
    j.at("seed").get_to(r.seed);
    r.stats = j.at("stats");
    j.at("wall_seconds").get_to(r.wall_seconds);
    j.at("code_version").get_to(r.code_version);
}

/// Single-writer append handle; every record is flushed as soon as it is written.
class RecordWriter {
public:
    explicit RecordWriter(const std::filesystem::path& path) : path_(path) {
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        out_.open(path, std::ios::app);
        if (!out_) throw std::runtime_error("cannot open record store " + path.string());
    }

    void append(const RunRecord& record) {
        out_ << nlohmann::json(record).dump() << '\n';
        out_.flush();
        if (!out_) throw std::runtime_error("failed writing record store " + path_.string());
    }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

inline void append_record(const std::filesystem::path& path, const RunRecord& record) {
    RecordWriter(path).append(record);
}

/// Every set field must match exactly.
struct RecordFilter {
    std::optional<std::string> kind;
    std::optional<std::string> activation;
    std::optional<double> sigma_w_sq;
    std::optional<double> sigma_b_sq;
    std::optional<int> depth;
    std::optional<int> width;
    std::optional<std::uint64_t> seed;

    bool matches(const RunRecord& r) const {
        return (!kind || *kind == r.kind) && (!activation || *activation == r.activation) &&
               (!sigma_w_sq || *sigma_w_sq == r.sigma_w_sq) && (!sigma_b_sq || *sigma_b_sq == r.sigma_b_sq) &&
               (!depth || *depth == r.depth) && (!width || *width == r.width) && (!seed || *seed == r.seed);
    }
};

struct QueryResult {
    std::vector<RunRecord> records;
    std::size_t malformed_lines = 0;
    /// One message per skipped line.
    std::vector<std::string> warnings;
};

/// A missing store reads as empty.
inline QueryResult query_records(const std::filesystem::path& path, const RecordFilter& filter = {}) {
    QueryResult result;
    std::ifstream in(path);
    if (!in) {
        if (std::filesystem::exists(path)) throw std::runtime_error("cannot read record store " + path.string());
        return result;
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            RunRecord r = nlohmann::json::parse(line).get<RunRecord>();
            if (filter.matches(r)) result.records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            ++result.malformed_lines;
            result.warnings.push_back(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return result;
}

namespace detail {

inline std::string csv_quote(std::string_view field) {
    if (field.find_first_of(",\"\n") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

}  // namespace detail

inline std::string records_to_csv(const std::vector<RunRecord>& records) {
    std::ostringstream out;
    out << "kind,activation,sigma_w_sq,sigma_b_sq,depth,width,learning_rate,steps,seed,wall_seconds,code_version,stats\n";
    out.precision(17);
    for (const auto& r : records) {
        out << detail::csv_quote(r.kind) << ',' << detail::csv_quote(r.activation) << ',' << r.sigma_w_sq << ','
            << r.sigma_b_sq << ',' << r.depth << ',' << r.width << ',' << r.learning_rate << ',' << r.steps << ','
            << r.seed << ',' << r.wall_seconds << ',' << detail::csv_quote(r.code_version) << ','
            << detail::csv_quote(r.stats.dump()) << '\n';
    }
    return out.str();
}

}  // namespace ntklab
