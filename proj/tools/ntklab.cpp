#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ntklab/ntklab.hpp"

namespace {

using namespace ntklab;
using lab::Experiment;

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Overrides {
    std::string config;
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::vector<std::string> activations;
    std::vector<double> sigma_w_sq;
    std::vector<double> sigma_b_sq;
    std::vector<int> depths;
    std::vector<int> widths;
    std::vector<double> covariances;
    std::optional<std::size_t> seeds;
    std::optional<std::int64_t> steps;
    std::optional<double> lr;
    std::optional<std::size_t> samples;
    std::optional<std::string> data_source;
    std::optional<std::string> data_dir;
    std::optional<std::string> input_layer;
    std::optional<std::size_t> mc_samples;
    std::vector<int> sample_sizes;
    std::optional<std::size_t> train_seeds;
    bool dry_run = false;
};

void add_common_options(CLI::App* cmd, Overrides& o, Experiment e) {
    cmd->add_option("--config", o.config, "JSON config file; flags override its values");
    cmd->add_option("--out-dir", o.out_dir, "Output directory for records.jsonl and the CSV (default ntklab-out)");
    cmd->add_option("--seed", o.seed, "Base seed for every random draw (default 0)");
    cmd->add_option("--threads", o.threads, "Worker threads across grid cells; 0 = all cores (default 1)");
    cmd->add_option("--activations", o.activations, "Activations: relu, erf, tanh")->delimiter(',');
    cmd->add_option("--sigma-w-sq", o.sigma_w_sq, "Weight variance grid")->delimiter(',');
    cmd->add_option("--sigma-b-sq", o.sigma_b_sq, "Bias variance grid")->delimiter(',');
    cmd->add_flag("--dry-run", o.dry_run, "Print the resolved config and job count, then exit");
    if (e != Experiment::phase_diagram) cmd->add_option("--depths", o.depths, "Depth grid L")->delimiter(',');
    if (e == Experiment::init_variance || e == Experiment::lm_curves || e == Experiment::train_drift ||
        e == Experiment::predict_variance)
        cmd->add_option("--widths", o.widths, "Hidden width grid M")->delimiter(',');
    if (e == Experiment::init_variance || e == Experiment::lm_curves)
        cmd->add_option("--seeds", o.seeds, "Random initializations per cell (default 200)");
    if (e == Experiment::train_drift) {
        cmd->add_option("--seeds", o.seeds, "Replicate networks per cell (default 1)");
        cmd->add_option("--steps", o.steps, "Maximum GD steps (default 2000)");
        cmd->add_option("--lr", o.lr, "Learning rate (default 1e-5)");
        cmd->add_option("--samples", o.samples, "Training-set size (default 128)");
        cmd->add_option("--data-source", o.data_source, "synthetic or mnist (default synthetic)");
        cmd->add_option("--data-dir", o.data_dir, "IDX directory (default $NTKLAB_DATA_DIR)");
    }
    if (e == Experiment::kappa_curves) {
        cmd->add_option("--covariances", o.covariances, "Input covariances c0 (default 0,0.5,0.9,1)")->delimiter(',');
        cmd->add_option("--input-layer", o.input_layer, "activated (default) or linear");
    }
    if (e == Experiment::predict_variance) {
        cmd->add_option("--mc-samples", o.mc_samples, "Monte-Carlo samples for the oracle (default 1e5)");
        cmd->add_option("--sample-sizes", o.sample_sizes, "Training-set sizes S (default 16,32)")->delimiter(',');
        cmd->add_option("--train-seeds", o.train_seeds, "Wide networks trained end to end per cell (default 0)");
        cmd->add_option("--input-layer", o.input_layer, "linear (default) or activated");
        cmd->add_option("--steps", o.steps, "Maximum GD steps for end-to-end training (default 20000)");
    }
}

lab::SweepConfig resolve(Experiment e, const Overrides& o) {
    lab::SweepConfig cfg = lab::default_config(e);
    if (!o.config.empty()) {
        const auto j = lab::load_json_file(o.config);
        if (j.contains("experiment") && j.at("experiment") != std::string(lab::to_string(e)))
            throw ConfigError("config is for experiment " + j.at("experiment").dump() + ", not " +
                              std::string(lab::to_string(e)));
        lab::apply_json(cfg, j);
    }
    nlohmann::json j = nlohmann::json::object();
    if (o.out_dir) j["out_dir"] = *o.out_dir;
    if (o.seed) j["seed"] = *o.seed;
    if (o.threads) j["threads"] = *o.threads;
    if (!o.activations.empty()) j["activations"] = o.activations;
    if (!o.sigma_w_sq.empty()) j["sigma_w_sq"] = o.sigma_w_sq;
    if (!o.sigma_b_sq.empty()) j["sigma_b_sq"] = o.sigma_b_sq;
    if (!o.depths.empty()) j["depths"] = o.depths;
    if (!o.widths.empty()) j["widths"] = o.widths;
    if (!o.covariances.empty()) j["covariances"] = o.covariances;
    if (o.seeds) j["seeds"] = *o.seeds;
    if (o.steps) j["train"]["max_steps"] = *o.steps;
    if (o.lr) j["train"]["learning_rate"] = *o.lr;
    if (o.samples) j["data"]["samples"] = *o.samples;
    if (o.data_source) j["data"]["source"] = *o.data_source;
    if (o.data_dir) j["data"]["dir"] = *o.data_dir;
    if (o.input_layer) j["input_layer"] = *o.input_layer;
    if (o.mc_samples) j["mc_samples"] = *o.mc_samples;
    if (!o.sample_sizes.empty()) j["sample_sizes"] = o.sample_sizes;
    if (o.train_seeds) j["train_seeds"] = *o.train_seeds;
    lab::apply_json(cfg, j);
    cfg.validate();
    return cfg;
}

nlohmann::json describe(const lab::SweepConfig& c) {
    nlohmann::json hypers = nlohmann::json::array();
    for (const auto& h : c.hypers) hypers.push_back({h.sigma_w_sq, h.sigma_b_sq});
    std::vector<std::string> acts;
    for (auto a : c.activations) acts.emplace_back(to_string(a));
    return {{"experiment", lab::to_string(c.experiment)},
            {"activations", acts},
            {"hypers", hypers},
            {"depths", c.depths},
            {"widths", c.widths},
            {"covariances", c.covariances},
            {"seeds", c.seeds},
            {"seed", c.seed},
            {"train",
             {{"learning_rate", c.train.learning_rate},
              {"max_steps", c.train.max_steps},
              {"early_stop_delta", c.train.early_stop_delta},
              {"early_stop_patience", c.train.early_stop_patience}}},
            {"snapshot_steps", c.snapshot_steps},
            {"data",
             {{"source", c.data.source},
              {"samples", c.data.samples},
              {"dim", c.data.dim},
              {"rho", c.data.rho},
              {"normalize", c.data.normalize},
              {"dir", c.data.dir}}},
            {"input_layer", c.input_layer == InputLayer::linear ? "linear" : "activated"},
            {"reference_covariance", c.reference_covariance},
            {"mc_samples", c.mc_samples},
            {"sample_sizes", c.sample_sizes},
            {"train_seeds", c.train_seeds},
            {"lr_scale", c.lr_scale},
            {"threads", c.threads},
            {"out_dir", c.out_dir.string()},
            {"jobs", c.job_count()}};
}

struct RecordsQuery {
    std::string store = "ntklab-out/records.jsonl";
    std::optional<std::string> kind;
    std::optional<std::string> activation;
    std::optional<int> depth;
    std::optional<int> width;
    std::optional<double> sigma_w_sq;
    std::optional<double> sigma_b_sq;
    std::string csv;
};

int run_records(const RecordsQuery& q) {
    RecordFilter f;
    f.kind = q.kind;
    f.activation = q.activation;
    f.depth = q.depth;
    f.width = q.width;
    f.sigma_w_sq = q.sigma_w_sq;
    f.sigma_b_sq = q.sigma_b_sq;
    const QueryResult r = query_records(q.store, f);
    for (const auto& w : r.warnings) std::cerr << "warning: skipped malformed record " << w << "\n";
    const std::string csv = records_to_csv(r.records);
    if (q.csv.empty()) {
        std::cout << csv;
    } else {
        std::ofstream out(q.csv, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + q.csv);
        out << csv;
    }
    std::cerr << r.records.size() << " records, " << r.malformed_lines << " malformed lines skipped\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ntklab: mean-field and neural tangent kernel experiments for fully-connected networks"};
    app.require_subcommand(1);

    const std::vector<std::pair<Experiment, std::string>> commands{
        {Experiment::phase_diagram, "chi1 at the variance fixed point and the ordered/chaotic label over (sigma_w^2, sigma_b^2)"},
        {Experiment::init_variance, "E[Theta0(x,x)^2]/E[Theta0(x,x)]^2 over (sigma_w^2, L) at fixed sigma_b^2 and M"},
        {Experiment::lm_curves, "the same ratio along L and L/M for a list of (sigma_w^2, sigma_b^2) pairs"},
        {Experiment::train_drift, "relative NTK change ||Theta_t - Theta_0||_F / ||Theta_0||_F during full-batch GD"},
        {Experiment::kappa_curves, "kappa1, kappa2 and their ratio as functions of depth"},
        {Experiment::predict_variance, "trained-output variance prediction against a Monte-Carlo oracle"},
    };
    std::map<std::string, Overrides> overrides;
    std::map<std::string, CLI::App*> subs;
    for (const auto& [e, help] : commands) {
        const std::string name(lab::to_string(e));
        auto* cmd = app.add_subcommand(name, help);
        add_common_options(cmd, overrides[name], e);
        subs[name] = cmd;
    }
    RecordsQuery rq;
    auto* rec = app.add_subcommand("records", "Query the JSON-lines record store and export CSV");
    rec->add_option("--store", rq.store, "Record store path (default ntklab-out/records.jsonl)");
    rec->add_option("--kind", rq.kind, "Experiment kind filter");
    rec->add_option("--activation", rq.activation, "Activation filter");
    rec->add_option("--depth", rq.depth, "Depth filter");
    rec->add_option("--width", rq.width, "Width filter");
    rec->add_option("--sigma-w-sq", rq.sigma_w_sq, "sigma_w^2 filter");
    rec->add_option("--sigma-b-sq", rq.sigma_b_sq, "sigma_b^2 filter");
    rec->add_option("--csv", rq.csv, "Write CSV here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (rec->parsed()) return run_records(rq);
        for (const auto& [e, help] : commands) {
            const std::string name(lab::to_string(e));
            if (!subs[name]->parsed()) continue;
            const Overrides& o = overrides[name];
            const lab::SweepConfig cfg = resolve(e, o);
            if (o.dry_run) {
                std::cout << describe(cfg).dump(2) << "\n";
                return 0;
            }
            std::cerr << name << ": " << cfg.job_count() << " jobs\n";
            lab::run_experiment(cfg, nullptr);
            std::cerr << "wrote " << (cfg.out_dir / (name + ".csv")).string() << " and "
                      << (cfg.out_dir / "records.jsonl").string() << "\n";
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
