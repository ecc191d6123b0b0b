#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ntklab/activation.hpp"
#include "ntklab/dataset.hpp"
#include "ntklab/empirical_ntk.hpp"
#include "ntklab/errors.hpp"
#include "ntklab/meanfield.hpp"
#include "ntklab/ntk_theory.hpp"
#include "ntklab/parallel.hpp"
#include "ntklab/records.hpp"
#include "ntklab/stats.hpp"
#include "ntklab/training.hpp"

namespace ntklab::lab {

enum class Experiment { phase_diagram, init_variance, lm_curves, train_drift, kappa_curves, predict_variance };

inline constexpr std::string_view to_string(Experiment e) noexcept {
    switch (e) {
        case Experiment::phase_diagram: return "phase-diagram";
        case Experiment::init_variance: return "init-variance";
        case Experiment::lm_curves: return "lm-curves";
        case Experiment::train_drift: return "train-drift";
        case Experiment::kappa_curves: return "kappa-curves";
        case Experiment::predict_variance: return "predict-variance";
    }
    return "?";
}

inline Experiment parse_experiment(std::string_view name) {
    for (auto e : {Experiment::phase_diagram, Experiment::init_variance, Experiment::lm_curves,
                   Experiment::train_drift, Experiment::kappa_curves, Experiment::predict_variance})
        if (name == to_string(e)) return e;
    throw ConfigError("unknown experiment '" + std::string(name) + "'");
}

struct Hyper {
    double sigma_w_sq;
    double sigma_b_sq;
    bool operator==(const Hyper&) const = default;
};

struct DataConfig {
    /// "synthetic" or "mnist"
    std::string source = "synthetic";
    std::size_t samples = 128;
    /// Input dimension of synthetic data (MNIST is always 784).
    int dim = 784;
    /// Typical pairwise covariance of synthetic inputs.
    double rho = 0.5;
    bool normalize = true;
    TargetEncoder encoder = TargetEncoder::scaled_digit;
    /// Directory with the IDX training files; empty means $NTKLAB_DATA_DIR.
    std::string dir;
};

struct SweepConfig {
    Experiment experiment = Experiment::phase_diagram;
    std::vector<Activation> activations;
    /// Grid of (sigma_w^2, sigma_b^2) cells, in order.
    std::vector<Hyper> hypers;
    std::vector<int> depths;
    std::vector<int> widths;
    /// Input covariances for kappa curves.
    std::vector<double> covariances;
    /// Replicates (random initializations) per cell.
    std::size_t seeds = 1;
    std::uint64_t seed = 0;
    TrainConfig train;
    std::vector<std::int64_t> snapshot_steps = kDefaultSnapshotSteps;
    DataConfig data;
    InputLayer input_layer = InputLayer::linear;
    double reference_covariance = kDefaultReferenceCovariance;
    std::size_t mc_samples = 100'000;
    /// Training-set sizes for predict-variance.
    std::vector<int> sample_sizes{16, 32};
    /// Wide networks trained per predict-variance cell (0 disables the end-to-end check).
    std::size_t train_seeds = 0;
    /// End-to-end learning rate as a multiple of S / lambda_max(Theta^0).
    double lr_scale = 0.5;
    unsigned threads = 1;
    std::filesystem::path out_dir = "ntklab-out";

    std::size_t job_count() const;
    void validate() const;
};

inline std::vector<Hyper> cartesian(const std::vector<double>& sw, const std::vector<double>& sb) {
    std::vector<Hyper> out;
    for (double b : sb)
        for (double w : sw) out.push_back({w, b});
    return out;
}

/// start, start + step, ..., up to stop inclusive, rounded to 1e-9 so decimal
/// grids print cleanly.
inline std::vector<double> linspace_step(double start, double stop, double step) {
    if (!(step > 0.0) || stop < start) throw ConfigError("invalid range");
    std::vector<double> out;
    const auto n = static_cast<std::int64_t>(std::floor((stop - start) / step + 1e-9));
    for (std::int64_t i = 0; i <= n; ++i) out.push_back(std::round((start + i * step) * 1e9) / 1e9);
    return out;
}

inline std::vector<int> int_range(int first, int last) {
    std::vector<int> out;
    for (int v = first; v <= last; ++v) out.push_back(v);
    return out;
}

/// Defaults per experiment, grids sized for a single workstation.
inline SweepConfig default_config(Experiment e) {
    SweepConfig c;
    c.experiment = e;
    switch (e) {
        case Experiment::phase_diagram:
            c.activations = {Activation::relu, Activation::erf, Activation::tanh};
            c.hypers = cartesian(linspace_step(0.5, 4.0, 0.1), {0.0, 0.5, 1.0});
            break;
        case Experiment::init_variance:
            c.activations = {Activation::relu};
            c.hypers = cartesian({0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0}, {1.0});
            c.depths = {2, 4, 8, 16, 32};
            c.widths = {64};
            c.seeds = 200;
            break;
        case Experiment::lm_curves:
            c.activations = {Activation::relu};
            c.hypers = {{1.0, 1.0}, {1.5, 1.0}, {2.0, 0.0}, {3.0, 1.0}};
            c.depths = {2, 4, 8, 16, 32, 64};
            c.widths = {64, 128};
            c.seeds = 200;
            break;
        case Experiment::train_drift:
            c.activations = {Activation::tanh};
            c.hypers = cartesian({1.0, 3.0}, {1.0});
            c.depths = {3, 20};
            c.widths = {256};
            c.seeds = 1;
            c.train.max_steps = 2000;
            break;
        case Experiment::kappa_curves:
            c.activations = {Activation::erf};
            c.hypers = {{1.0, 1.0}, {3.0, 1.0}};
            c.depths = int_range(1, 50);
            c.covariances = {0.0, 0.5, 0.9, 1.0};
            c.input_layer = InputLayer::activated;
            break;
        case Experiment::predict_variance:
            c.activations = {Activation::erf};
            c.hypers = {{3.0, 1.0}};
            c.depths = {8};
            c.widths = {1024};
            c.data.dim = 100;
            c.train.max_steps = 20'000;
            c.train.early_stop_delta = 0.0;
            break;
    }
    return c;
}

inline std::size_t SweepConfig::job_count() const {
    const std::size_t base = activations.size() * hypers.size();
    switch (experiment) {
        case Experiment::phase_diagram: return base;
        case Experiment::init_variance:
        case Experiment::lm_curves: return base * depths.size() * widths.size();
        case Experiment::train_drift: return base * depths.size() * widths.size() * seeds;
        case Experiment::kappa_curves: return base * covariances.size();
        case Experiment::predict_variance: return base * depths.size() * sample_sizes.size();
    }
    return 0;
}

inline void SweepConfig::validate() const {
    if (activations.empty()) throw ConfigError("no activations configured");
    if (hypers.empty()) throw ConfigError("no (sigma_w^2, sigma_b^2) cells configured");
    for (const auto& h : hypers) {
        if (!(h.sigma_w_sq > 0.0) || !std::isfinite(h.sigma_w_sq)) throw ConfigError("sigma_w^2 must be positive");
        if (!(h.sigma_b_sq >= 0.0) || !std::isfinite(h.sigma_b_sq)) throw ConfigError("sigma_b^2 must be non-negative");
    }
    const bool needs_depth = experiment != Experiment::phase_diagram;
    const bool needs_width = experiment == Experiment::init_variance || experiment == Experiment::lm_curves ||
                             experiment == Experiment::train_drift || experiment == Experiment::predict_variance;
    if (needs_depth && depths.empty()) throw ConfigError("no depths configured");
    for (int d : depths)
        if (d < 1) throw ConfigError("depths must be at least 1");
    if (needs_width && widths.empty()) throw ConfigError("no widths configured");
    for (int w : widths)
        if (w < 1) throw ConfigError("widths must be at least 1");
    if ((experiment == Experiment::init_variance || experiment == Experiment::lm_curves) && seeds < 2)
        throw ConfigError("variance ratios need at least 2 seeds");
    if (experiment == Experiment::train_drift && seeds < 1) throw ConfigError("seeds must be at least 1");
    if (experiment == Experiment::kappa_curves) {
        if (covariances.empty()) throw ConfigError("no covariances configured");
        for (double c : covariances)
            if (!(c >= -1.0 && c <= 1.0)) throw ConfigError("covariances must lie in [-1, 1]");
    }
    if (experiment == Experiment::predict_variance) {
        if (sample_sizes.empty()) throw ConfigError("no sample sizes configured");
        for (int s : sample_sizes)
            if (s < 1) throw ConfigError("sample sizes must be positive");
        if (mc_samples < 1000) throw ConfigError("mc_samples must be at least 1000");
        if (!(lr_scale > 0.0 && lr_scale < 2.0)) throw ConfigError("lr_scale must lie in (0, 2)");
        if (train_seeds == 1) throw ConfigError("train_seeds must be 0 or at least 2");
    }
    if (!(reference_covariance >= -1.0 && reference_covariance <= 1.0))
        throw ConfigError("reference covariance must lie in [-1, 1]");
    train.validate();
    if (!std::is_sorted(snapshot_steps.begin(), snapshot_steps.end())) throw ConfigError("snapshot steps must be sorted");
    if (data.source != "synthetic" && data.source != "mnist") throw ConfigError("data source must be synthetic or mnist");
    if (data.dim < 2) throw ConfigError("data dim must be at least 2");
    if (!(data.rho >= 0.0 && data.rho <= 1.0)) throw ConfigError("data rho must lie in [0, 1]");
    if (experiment == Experiment::train_drift && data.samples < 1) throw ConfigError("need at least one sample");
}

// -- JSON configuration --------------------------------------------------------

namespace detail {

inline std::vector<double> number_list(const nlohmann::json& j, const char* key) {
    if (j.is_number()) return {j.get<double>()};
    if (j.is_array()) {
        std::vector<double> out;
        for (const auto& v : j) {
            if (!v.is_number()) throw ConfigError(std::string(key) + " must contain numbers");
            out.push_back(v.get<double>());
        }
        return out;
    }
    if (j.is_object()) {
        if (!j.contains("start") || !j.contains("stop") || !j.contains("step"))
            throw ConfigError(std::string(key) + " range needs start, stop and step");
        return linspace_step(j.at("start").get<double>(), j.at("stop").get<double>(), j.at("step").get<double>());
    }
    throw ConfigError(std::string(key) + " must be a number, a list, or a {start, stop, step} range");
}

inline std::vector<int> int_list(const nlohmann::json& j, const char* key) {
    std::vector<int> out;
    for (double v : number_list(j, key)) {
        if (v != std::floor(v)) throw ConfigError(std::string(key) + " must contain integers");
        out.push_back(static_cast<int>(v));
    }
    return out;
}

inline void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed, const char* where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (auto a : allowed) ok = ok || it.key() == a;
        if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
}

}  // namespace detail

/// Overlays a JSON document onto `cfg`. Keys not present keep their values.
inline void apply_json(SweepConfig& cfg, const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    try {
        detail::check_keys(j,
                           {"experiment", "activations", "sigma_w_sq", "sigma_b_sq", "hypers", "depths", "widths",
                            "covariances", "seeds", "seed", "train", "snapshot_steps", "data", "input_layer",
                            "reference_covariance", "mc_samples", "sample_sizes", "train_seeds", "lr_scale", "threads",
                            "out_dir"},
                           "config");
        if (j.contains("experiment")) cfg.experiment = parse_experiment(j.at("experiment").get<std::string>());
        if (j.contains("activations")) {
            cfg.activations.clear();
            const auto& a = j.at("activations");
            if (a.is_string())
                cfg.activations.push_back(parse_activation(a.get<std::string>()));
            else
                for (const auto& v : a) cfg.activations.push_back(parse_activation(v.get<std::string>()));
        }
        if (j.contains("hypers")) {
            cfg.hypers.clear();
            for (const auto& h : j.at("hypers")) {
                if (!h.is_array() || h.size() != 2) throw ConfigError("hypers entries must be [sigma_w_sq, sigma_b_sq]");
                cfg.hypers.push_back({h[0].get<double>(), h[1].get<double>()});
            }
        } else if (j.contains("sigma_w_sq") || j.contains("sigma_b_sq")) {
            std::vector<double> sw, sb;
            for (const auto& h : cfg.hypers) {
                if (std::find(sw.begin(), sw.end(), h.sigma_w_sq) == sw.end()) sw.push_back(h.sigma_w_sq);
                if (std::find(sb.begin(), sb.end(), h.sigma_b_sq) == sb.end()) sb.push_back(h.sigma_b_sq);
            }
            if (j.contains("sigma_w_sq")) sw = detail::number_list(j.at("sigma_w_sq"), "sigma_w_sq");
            if (j.contains("sigma_b_sq")) sb = detail::number_list(j.at("sigma_b_sq"), "sigma_b_sq");
            cfg.hypers = cartesian(sw, sb);
        }
        if (j.contains("depths")) cfg.depths = detail::int_list(j.at("depths"), "depths");
        if (j.contains("widths")) cfg.widths = detail::int_list(j.at("widths"), "widths");
        if (j.contains("covariances")) cfg.covariances = detail::number_list(j.at("covariances"), "covariances");
        if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::size_t>();
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("train")) {
            const auto& t = j.at("train");
            detail::check_keys(t, {"learning_rate", "max_steps", "early_stop_delta", "early_stop_patience"}, "train");
            if (t.contains("learning_rate")) cfg.train.learning_rate = t.at("learning_rate").get<double>();
            if (t.contains("max_steps")) cfg.train.max_steps = t.at("max_steps").get<std::int64_t>();
            if (t.contains("early_stop_delta")) cfg.train.early_stop_delta = t.at("early_stop_delta").get<double>();
            if (t.contains("early_stop_patience"))
                cfg.train.early_stop_patience = t.at("early_stop_patience").get<std::int64_t>();
        }
        if (j.contains("snapshot_steps")) cfg.snapshot_steps = j.at("snapshot_steps").get<std::vector<std::int64_t>>();
        if (j.contains("data")) {
            const auto& d = j.at("data");
            detail::check_keys(d, {"source", "samples", "dim", "rho", "normalize", "encoder", "dir"}, "data");
            if (d.contains("source")) cfg.data.source = d.at("source").get<std::string>();
            if (d.contains("samples")) cfg.data.samples = d.at("samples").get<std::size_t>();
            if (d.contains("dim")) cfg.data.dim = d.at("dim").get<int>();
            if (d.contains("rho")) cfg.data.rho = d.at("rho").get<double>();
            if (d.contains("normalize")) cfg.data.normalize = d.at("normalize").get<bool>();
            if (d.contains("encoder")) cfg.data.encoder = parse_target_encoder(d.at("encoder").get<std::string>());
            if (d.contains("dir")) cfg.data.dir = d.at("dir").get<std::string>();
        }
        if (j.contains("input_layer")) {
            const auto mode = j.at("input_layer").get<std::string>();
            if (mode == "linear")
                cfg.input_layer = InputLayer::linear;
            else if (mode == "activated")
                cfg.input_layer = InputLayer::activated;
            else
                throw ConfigError("input_layer must be linear or activated");
        }
        if (j.contains("reference_covariance")) cfg.reference_covariance = j.at("reference_covariance").get<double>();
        if (j.contains("mc_samples")) cfg.mc_samples = j.at("mc_samples").get<std::size_t>();
        if (j.contains("sample_sizes")) cfg.sample_sizes = detail::int_list(j.at("sample_sizes"), "sample_sizes");
        if (j.contains("train_seeds")) cfg.train_seeds = j.at("train_seeds").get<std::size_t>();
        if (j.contains("lr_scale")) cfg.lr_scale = j.at("lr_scale").get<double>();
        if (j.contains("threads")) cfg.threads = j.at("threads").get<unsigned>();
        if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

inline nlohmann::json load_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    try {
        return nlohmann::json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
}

// -- CSV output ----------------------------------------------------------------

inline constexpr std::string_view kCsvHeader =
    "experiment,activation,sigma_w_sq,sigma_b_sq,depth,width,samples,covariance,replicate,step,statistic,value";

/// One long-format row. Unset optional columns print as empty fields.
struct CsvRow {
    std::string activation;
    std::optional<double> sigma_w_sq;
    std::optional<double> sigma_b_sq;
    std::optional<int> depth;
    std::optional<int> width;
    std::optional<int> samples;
    std::optional<double> covariance;
    std::optional<std::int64_t> replicate;
    std::optional<std::int64_t> step;
    std::string statistic;
    double value = 0.0;
};

/// Shortest representation that round-trips.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string format_csv(Experiment e, const std::vector<CsvRow>& rows) {
    std::string out(kCsvHeader);
    out += '\n';
    auto opt = [](const auto& o) -> std::string {
        if (!o) return {};
        if constexpr (std::is_floating_point_v<std::decay_t<decltype(*o)>>)
            return format_number(*o);
        else
            return std::to_string(*o);
    };
    for (const auto& r : rows) {
        out += to_string(e);
        out += ',' + r.activation + ',' + opt(r.sigma_w_sq) + ',' + opt(r.sigma_b_sq) + ',' + opt(r.depth) + ',' +
               opt(r.width) + ',' + opt(r.samples) + ',' + opt(r.covariance) + ',' + opt(r.replicate) + ',' + opt(r.step) + ',' +
               r.statistic + ',' + format_number(r.value) + '\n';
    }
    return out;
}

// -- Jobs ----------------------------------------------------------------------

struct JobOutput {
    std::vector<CsvRow> rows;
    std::vector<RunRecord> records;
};

struct Job {
    std::string label;
    std::function<JobOutput()> run;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline RunRecord base_record(const SweepConfig& cfg, Activation act, const Hyper& h, int depth, int width) {
    RunRecord r;
    r.kind = std::string(to_string(cfg.experiment));
    r.sigma_w_sq = h.sigma_w_sq;
    r.sigma_b_sq = h.sigma_b_sq;
    r.depth = depth;
    r.width = width;
    r.activation = std::string(to_string(act));
    r.seed = cfg.seed;
    return r;
}

inline CsvRow row(Activation act, const Hyper& h, std::string statistic, double value) {
    CsvRow r;
    r.activation = std::string(to_string(act));
    r.sigma_w_sq = h.sigma_w_sq;
    r.sigma_b_sq = h.sigma_b_sq;
    r.statistic = std::move(statistic);
    r.value = value;
    return r;
}

inline double phase_code(Phase p) {
    switch (p) {
        case Phase::ordered: return -1.0;
        case Phase::edge_of_chaos: return 0.0;
        case Phase::chaotic: return 1.0;
    }
    return 0.0;
}

}  // namespace detail

/// Loads the training set named by the data config.
inline Dataset load_dataset(const SweepConfig& cfg) {
    if (cfg.data.source == "mnist") {
        std::string dir = cfg.data.dir;
        if (dir.empty()) {
            const char* env = std::getenv("NTKLAB_DATA_DIR");
            if (!env) throw ConfigError("mnist data needs data.dir or NTKLAB_DATA_DIR");
            dir = env;
        }
        return load_mnist_subset(std::filesystem::path(dir), cfg.data.samples, derive_seed(cfg.seed, {0xDA7Aull}),
                                 cfg.data.normalize, cfg.data.encoder);
    }
    return synthetic_dataset(static_cast<Eigen::Index>(cfg.data.samples), cfg.data.dim, cfg.data.rho,
                             derive_seed(cfg.seed, {0xDA7Aull}));
}

inline std::vector<Job> phase_diagram_jobs(const SweepConfig& cfg) {
    std::vector<Job> jobs;
    for (Activation act : cfg.activations)
        for (const Hyper& h : cfg.hypers)
            jobs.push_back({"phase", [&cfg, act, h] {
                                const auto t0 = std::chrono::steady_clock::now();
                                const PhaseLabel label = classify_phase(InitHyper(h.sigma_w_sq, h.sigma_b_sq, act));
                                JobOutput out;
                                out.rows.push_back(detail::row(act, h, "chi1", label.chi1_fixed_point));
                                out.rows.push_back(detail::row(act, h, "phase", detail::phase_code(label.phase)));
                                out.rows.push_back(detail::row(act, h, "q_star", label.q_fixed_point));
                                RunRecord r = detail::base_record(cfg, act, h, 0, 0);
                                r.stats = {{"chi1", label.chi1_fixed_point},
                                           {"phase", to_string(label.phase)},
                                           {"q_star", std::isfinite(label.q_fixed_point) ? nlohmann::json(label.q_fixed_point)
                                                                                          : nlohmann::json("inf")}};
                                r.wall_seconds = detail::seconds_since(t0);
                                out.records.push_back(std::move(r));
                                return out;
                            }});
    return jobs;
}

/// Border rows: for every (activation, sigma_b^2) the sigma_w^2 where chi1 = 1,
/// bisected between the adjacent grid cells whose chi1 straddles 1.
inline std::vector<CsvRow> phase_border_rows(const SweepConfig& cfg, const std::vector<CsvRow>& rows) {
    std::vector<CsvRow> out;
    for (Activation act : cfg.activations) {
        std::vector<double> biases;
        for (const auto& h : cfg.hypers)
            if (std::find(biases.begin(), biases.end(), h.sigma_b_sq) == biases.end()) biases.push_back(h.sigma_b_sq);
        for (double sb : biases) {
            std::vector<std::pair<double, double>> chi;
            for (const auto& r : rows)
                if (r.statistic == "chi1" && r.activation == to_string(act) && r.sigma_b_sq == sb)
                    chi.emplace_back(*r.sigma_w_sq, r.value);
            std::sort(chi.begin(), chi.end());
            for (std::size_t i = 0; i + 1 < chi.size(); ++i) {
                const double a = chi[i].second - 1.0, b = chi[i + 1].second - 1.0;
                if (a == 0.0 || a * b < 0.0) {
                    const double root =
                        a == 0.0 ? chi[i].first : locate_phase_border(act, sb, chi[i].first, chi[i + 1].first);
                    CsvRow r;
                    r.activation = std::string(to_string(act));
                    r.sigma_b_sq = sb;
                    r.statistic = "phase_border_sigma_w_sq";
                    r.value = root;
                    out.push_back(std::move(r));
                    break;
                }
            }
        }
    }
    return out;
}

inline std::vector<Job> init_variance_jobs(const SweepConfig& cfg) {
    std::vector<Job> jobs;
    const auto probe_seed = derive_seed(cfg.seed, {0x9A0BEull});
    for (Activation act : cfg.activations)
        for (const Hyper& h : cfg.hypers)
            for (int width : cfg.widths)
                for (int depth : cfg.depths)
                    jobs.push_back({"ratio", [&cfg, act, h, width, depth, probe_seed] {
                                        const auto t0 = std::chrono::steady_clock::now();
                                        const Architecture arch{cfg.data.dim, width, depth};
                                        const Eigen::VectorXd x = probe_input(cfg.data.dim, probe_seed);
                                        JobOutput out;
                                        RunRecord rec = detail::base_record(cfg, act, h, depth, width);
                                        auto add = [&](const char* stat, double v) {
                                            CsvRow r = detail::row(act, h, stat, v);
                                            r.depth = depth;
                                            r.width = width;
                                            out.rows.push_back(std::move(r));
                                            rec.stats[stat] = v;
                                        };
                                        try {
                                            const VarianceRatioStat s = init_variance_ratio(
                                                arch, InitHyper(h.sigma_w_sq, h.sigma_b_sq, act), x, cfg.seeds, cfg.seed);
                                            add("ratio", s.ratio);
                                            add("standard_error", s.standard_error);
                                            add("mean_theta", s.mean);
                                            add("second_moment_theta", s.second_moment);
                                            add("excluded_seeds", static_cast<double>(s.excluded_seeds));
                                            add("l_over_m", static_cast<double>(depth) / width);
                                            rec.stats["n_seeds"] = s.n_seeds;
                                        } catch (const OverflowError& e) {
                                            add("overflow", 1.0);
                                            rec.stats["error"] = e.what();
                                        }
                                        rec.wall_seconds = detail::seconds_since(t0);
                                        out.records.push_back(std::move(rec));
                                        return out;
                                    }});
    return jobs;
}

inline std::vector<Job> train_drift_jobs(const SweepConfig& cfg, std::shared_ptr<const Dataset> data) {
    std::vector<Job> jobs;
    for (Activation act : cfg.activations)
        for (const Hyper& h : cfg.hypers)
            for (int width : cfg.widths)
                for (int depth : cfg.depths)
                    for (std::size_t rep = 0; rep < cfg.seeds; ++rep)
                        jobs.push_back({"drift", [&cfg, act, h, width, depth, rep, data] {
                                            const auto t0 = std::chrono::steady_clock::now();
                                            const Architecture arch{static_cast<int>(data->dim()), width, depth};
                                            const std::uint64_t seed = replicate_seed(cfg.seed, rep);
                                            const DriftStat s = training_drift(arch, InitHyper(h.sigma_w_sq, h.sigma_b_sq, act),
                                                                               *data, cfg.train, cfg.snapshot_steps, seed);
                                            JobOutput out;
                                            auto add = [&](const char* stat, double v, std::optional<std::int64_t> step) {
                                                CsvRow r = detail::row(act, h, stat, v);
                                                r.depth = depth;
                                                r.width = width;
                                                r.samples = static_cast<int>(data->size());
                                                r.replicate = static_cast<std::int64_t>(rep);
                                                r.step = step;
                                                out.rows.push_back(std::move(r));
                                            };
                                            for (std::size_t i = 0; i < s.steps.size(); ++i) {
                                                add("drift", s.rel_change[i], s.steps[i]);
                                                add("loss", s.losses[i], s.steps[i]);
                                            }
                                            add("final_drift", s.rel_change.back(), std::nullopt);
                                            add("initial_loss", s.initial_loss, std::nullopt);
                                            add("final_loss", s.final_loss, std::nullopt);
                                            add("final_step", static_cast<double>(s.final_step), std::nullopt);
                                            add("diverged", s.diverged ? 1.0 : 0.0, std::nullopt);
                                            RunRecord rec = detail::base_record(cfg, act, h, depth, width);
                                            rec.seed = seed;
                                            rec.learning_rate = cfg.train.learning_rate;
                                            rec.steps = s.final_step;
                                            rec.stats = {{"replicate", rep},
                                                         {"steps", s.steps},
                                                         {"rel_change", s.rel_change},
                                                         {"losses", s.losses},
                                                         {"initial_loss", s.initial_loss},
                                                         {"final_loss", s.final_loss},
                                                         {"stop_reason", to_string(s.stop_reason)},
                                                         {"diverged", s.diverged},
                                                         {"diverged_at", s.diverged_at},
                                                         {"samples", data->size()}};
                                            rec.wall_seconds = detail::seconds_since(t0);
                                            out.records.push_back(std::move(rec));
                                            return out;
                                        }});
    return jobs;
}

inline std::vector<Job> kappa_curve_jobs(const SweepConfig& cfg) {
    std::vector<Job> jobs;
    for (Activation act : cfg.activations)
        for (const Hyper& h : cfg.hypers)
            for (double cov : cfg.covariances)
                jobs.push_back({"kappa", [&cfg, act, h, cov] {
                                    const auto t0 = std::chrono::steady_clock::now();
                                    const InitHyper hyper(h.sigma_w_sq, h.sigma_b_sq, act);
                                    JobOutput out;
                                    RunRecord rec = detail::base_record(cfg, act, h, 0, 0);
                                    nlohmann::json series = nlohmann::json::array();
                                    const double width = cfg.widths.empty() ? 1.0 : cfg.widths.front();
                                    for (int depth : cfg.depths) {
                                        const MeanFieldTrace t = run_trace(hyper, depth, 1.0, cov, cfg.input_layer);
                                        const auto fr = equal_width_fractions(depth, cfg.input_layer, width);
                                        const KappaPair k = compute_kappas(t, fr);
                                        const ConditionRatio ratio = condition_ratio(k, 1);
                                        for (auto [stat, v] : {std::pair{"kappa1", k.kappa1}, std::pair{"kappa2", k.kappa2},
                                                               std::pair{"kappa_ratio", ratio.ratio},
                                                               std::pair{"q_L", t.q[depth]}, std::pair{"q_sr_L", t.q_sr[depth]}}) {
                                            CsvRow r = detail::row(act, h, stat, v);
                                            r.depth = depth;
                                            r.covariance = cov;
                                            out.rows.push_back(std::move(r));
                                        }
                                        series.push_back({{"depth", depth}, {"kappa1", k.kappa1}, {"kappa2", k.kappa2}});
                                    }
                                    rec.stats = {{"covariance", cov}, {"series", series}};
                                    rec.wall_seconds = detail::seconds_since(t0);
                                    out.records.push_back(std::move(rec));
                                    return out;
                                }});
    return jobs;
}

/// Theorem-level variance check on one synthetic dataset.
struct PredictVarianceResult {
    VariancePrediction prediction;
    MonteCarloVariance oracle;
    double kappa_ratio = 0.0;
    double effective_ratio = 0.0;
    /// End-to-end statistics; NaN when disabled.
    double trained_variance = std::numeric_limits<double>::quiet_NaN();
    double trained_final_loss = std::numeric_limits<double>::quiet_NaN();
    std::size_t trained_runs = 0;
};

/// S training points plus one held-out test point drawn from the synthetic
/// equicorrelated generator; Theta* and the joint NNGP come from pairwise traces.
inline PredictVarianceResult predict_variance_cell(const InitHyper& hyper, int depth, int width, int samples,
                                                   const SweepConfig& cfg) {
    const std::uint64_t data_seed = derive_seed(cfg.seed, {0xDA7Aull, static_cast<std::uint64_t>(samples)});
    const Dataset joint = synthetic_dataset(samples + 1, cfg.data.dim, cfg.data.rho, data_seed);
    const Eigen::MatrixXd gram = joint.gram();
    const PairTraceTable table(hyper, depth, gram, cfg.input_layer);
    const auto fractions = equal_width_fractions(depth, cfg.input_layer, width);
    const double alpha = width_alpha(fractions);
    const MeanFieldTrace ref_trace = reference_trace(hyper, depth, cfg.reference_covariance, cfg.input_layer);
    const KappaPair ref = compute_kappas(ref_trace, fractions);
    const ThetaStar theta_joint = build_theta_star(pairwise_kappas(table, fractions), width, alpha, ref);
    const NngpMatrix nngp = nngp_matrix(table);

    const Eigen::Index s = samples;
    const Eigen::MatrixXd theta = theta_joint.matrix.topLeftCorner(s, s);
    const Eigen::VectorXd theta_x = theta_joint.matrix.col(s).head(s);

    PredictVarianceResult res;
    res.kappa_ratio = condition_ratio(ref, static_cast<std::size_t>(samples)).ratio;
    res.effective_ratio = theta_joint.mean_part.effective_ratio();
    res.prediction = predict_variance(res.effective_ratio, ref_trace.q[depth], ref_trace.q_sr[depth],
                                      static_cast<std::size_t>(samples));
    res.oracle = variance_oracle_mc(theta, theta_x, nngp.matrix, cfg.mc_samples, derive_seed(cfg.seed, {0x3C0ull}),
                                    cfg.threads);

    if (cfg.train_seeds >= 2) {
        const Eigen::MatrixXd x_train = joint.inputs.leftCols(s);
        const Eigen::VectorXd y_train = joint.targets.head(s);
        const Eigen::VectorXd x_test = joint.inputs.col(s);
        const Architecture arch{static_cast<int>(joint.dim()), width, depth};
        std::vector<double> outputs(cfg.train_seeds), losses(cfg.train_seeds);
        parallel_for(cfg.train_seeds, cfg.threads, [&](std::size_t rep) {
            Mlp net(arch.widths(), hyper, replicate_seed(cfg.seed, rep));
            const Eigen::MatrixXd k0 = empirical_kernel(net, x_train).matrix;
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k0, Eigen::EigenvaluesOnly);
            TrainConfig tc = cfg.train;
            tc.learning_rate = cfg.lr_scale * static_cast<double>(s) / es.eigenvalues()(s - 1);
            const TrainingLog log = train_full_batch(net, x_train, y_train, tc);
            outputs[rep] = net.output(x_test);
            losses[rep] = log.losses.back();
        });
        RunningMoments out_m, loss_m;
        for (std::size_t i = 0; i < cfg.train_seeds; ++i) {
            out_m.add(outputs[i]);
            loss_m.add(losses[i]);
        }
        res.trained_variance = out_m.variance();
        res.trained_final_loss = loss_m.mean();
        res.trained_runs = cfg.train_seeds;
    }
    return res;
}

inline std::vector<Job> predict_variance_jobs(const SweepConfig& cfg) {
    std::vector<Job> jobs;
    for (Activation act : cfg.activations)
        for (const Hyper& h : cfg.hypers)
            for (int depth : cfg.depths)
                for (int samples : cfg.sample_sizes)
                    jobs.push_back({"predict", [&cfg, act, h, depth, samples] {
                                        const auto t0 = std::chrono::steady_clock::now();
                                        const int width = cfg.widths.front();
                                        SweepConfig inner = cfg;
                                        inner.threads = 1;
                                        const auto res = predict_variance_cell(InitHyper(h.sigma_w_sq, h.sigma_b_sq, act),
                                                                               depth, width, samples, inner);
                                        JobOutput out;
                                        RunRecord rec = detail::base_record(cfg, act, h, depth, width);
                                        auto add = [&](const char* stat, double v) {
                                            CsvRow r = detail::row(act, h, stat, v);
                                            r.depth = depth;
                                            r.width = width;
                                            r.samples = samples;
                                            r.covariance = cfg.data.rho;
                                            out.rows.push_back(std::move(r));
                                            if (std::isfinite(v)) rec.stats[stat] = v;
                                        };
                                        add("A", res.prediction.A);
                                        add("kappa_ratio", res.kappa_ratio);
                                        add("effective_ratio", res.effective_ratio);
                                        add("q_bar_L", res.prediction.q_bar_L);
                                        add("q_bar_sr_L", res.prediction.q_bar_sr_L);
                                        add("predicted_variance", res.prediction.variance);
                                        add("mc_variance", res.oracle.variance);
                                        add("mc_standard_error", res.oracle.standard_error);
                                        add("mc_relative_error",
                                            std::abs(res.prediction.variance - res.oracle.variance) / res.oracle.variance);
                                        if (res.trained_runs > 0) {
                                            add("trained_variance", res.trained_variance);
                                            add("trained_relative_error",
                                                std::abs(res.prediction.variance - res.trained_variance) / res.prediction.variance);
                                            add("trained_final_loss", res.trained_final_loss);
                                        }
                                        rec.stats["psd_warning"] = res.oracle.psd_warning;
                                        rec.wall_seconds = detail::seconds_since(t0);
                                        out.records.push_back(std::move(rec));
                                        return out;
                                    }});
    return jobs;
}

// -- Runner --------------------------------------------------------------------

struct RunSummary {
    std::size_t jobs = 0;
    std::string csv;
    std::filesystem::path csv_path;
    std::filesystem::path records_path;
};

/// Runs every grid cell (in parallel across cells), appends RunRecords in grid
/// order, then writes <out_dir>/<experiment>.csv. If a cell fails, the records
/// of the cells that finished are still written before the first error (in
/// grid order) is rethrown.
inline RunSummary run_experiment(const SweepConfig& cfg, std::ostream* log = nullptr) {
    cfg.validate();
    std::vector<Job> jobs;
    std::shared_ptr<const Dataset> data;
    switch (cfg.experiment) {
        case Experiment::phase_diagram: jobs = phase_diagram_jobs(cfg); break;
        case Experiment::init_variance:
        case Experiment::lm_curves: jobs = init_variance_jobs(cfg); break;
        case Experiment::train_drift:
            data = std::make_shared<const Dataset>(load_dataset(cfg));
            jobs = train_drift_jobs(cfg, data);
            break;
        case Experiment::kappa_curves: jobs = kappa_curve_jobs(cfg); break;
        case Experiment::predict_variance: jobs = predict_variance_jobs(cfg); break;
    }
    if (log) *log << to_string(cfg.experiment) << ": " << jobs.size() << " jobs\n" << std::flush;

    std::vector<std::optional<JobOutput>> results(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    parallel_for(jobs.size(), cfg.threads, [&](std::size_t i) {
        try {
            results[i] = jobs[i].run();
        } catch (...) {
            errors[i] = std::current_exception();
        }
    });

    RunSummary summary;
    summary.jobs = jobs.size();
    std::filesystem::create_directories(cfg.out_dir);
    summary.records_path = cfg.out_dir / "records.jsonl";
    {
        RecordWriter writer(summary.records_path);
        for (const auto& r : results)
            if (r)
                for (const auto& rec : r->records) writer.append(rec);
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::vector<CsvRow> rows;
    for (const auto& r : results) rows.insert(rows.end(), r->rows.begin(), r->rows.end());
    if (cfg.experiment == Experiment::phase_diagram) {
        auto border = phase_border_rows(cfg, rows);
        rows.insert(rows.end(), border.begin(), border.end());
    }
    summary.csv = format_csv(cfg.experiment, rows);
    summary.csv_path = cfg.out_dir / (std::string(to_string(cfg.experiment)) + ".csv");
    std::ofstream out(summary.csv_path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + summary.csv_path.string());
    out << summary.csv;
    if (log) *log << "wrote " << summary.csv_path.string() << " and " << summary.records_path.string() << "\n";
    return summary;
}

}  // namespace ntklab::lab
