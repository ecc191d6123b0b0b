#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ntklab/dataset.hpp"
#include "ntklab/errors.hpp"
#include "ntklab/mlp.hpp"
#include "ntklab/parallel.hpp"
#include "ntklab/random.hpp"
#include "ntklab/stats.hpp"
#include "ntklab/training.hpp"

namespace ntklab {

enum class KernelProvenance { empirical, theoretical, nngp };

struct KernelMatrix {
    Eigen::MatrixXd matrix;
    KernelProvenance provenance = KernelProvenance::empirical;
    std::uint64_t seed = 0;
    std::int64_t step = 0;
};

enum class KernelMode {
    /// Holds all S flat gradients (S x P) and forms their Gram matrix.
    materialized,
    /// Never forms a gradient: Theta = sum_l (D_l^T D_l) o (A_{l-1}^T A_{l-1} + 1 1^T),
    /// with D_l the per-sample output sensitivities of layer l and A_{l-1} its inputs.
    factored,
};

/// Flat gradients of f at every column of x, one row per sample.
inline Eigen::MatrixXd gradient_matrix(const Mlp& net, const Eigen::MatrixXd& x) {
    Eigen::MatrixXd g(x.cols(), net.parameter_count());
    for (Eigen::Index s = 0; s < x.cols(); ++s) g.row(s) = net.gradient(x.col(s)).transpose();
    return g;
}

inline KernelMatrix empirical_kernel(const Mlp& net, const Eigen::MatrixXd& x,
                                     KernelMode mode = KernelMode::factored, std::int64_t step = 0) {
    KernelMatrix k;
    k.provenance = KernelProvenance::empirical;
    k.seed = net.seed();
    k.step = step;
    if (mode == KernelMode::materialized) {
        const Eigen::MatrixXd g = gradient_matrix(net, x);
        k.matrix = g * g.transpose();
    } else {
        BatchCache cache;
        net.forward_batch(x, &cache);
        const auto delta = net.backprop_batch(cache, Eigen::RowVectorXd::Ones(x.cols()));
        k.matrix = Eigen::MatrixXd::Zero(x.cols(), x.cols());
        for (int l = 1; l <= net.depth(); ++l) {
            const Eigen::MatrixXd& d = delta[static_cast<std::size_t>(l - 1)];
            const Eigen::MatrixXd& a = cache.post[static_cast<std::size_t>(l - 1)];
            Eigen::MatrixXd inputs = a.transpose() * a;
            inputs.array() += 1.0;
            k.matrix.array() += (d.transpose() * d).array() * inputs.array();
        }
    }
    k.matrix = 0.5 * (k.matrix + k.matrix.transpose()).eval();
    return k;
}

/// Theta(x, x) = ||grad f(x)||^2.
inline double kernel_diagonal(const Mlp& net, const Eigen::VectorXd& x) {
    return empirical_kernel(net, x, KernelMode::factored).matrix(0, 0);
}

/// Architecture of networks built by the experiment drivers: input dimension,
/// hidden width M, depth L (number of weight layers).
struct Architecture {
    int input_dim = 0;
    int width = 0;
    int depth = 0;

    std::vector<int> widths() const { return Mlp::uniform_widths(input_dim, width, depth); }
};

/// Seed of replicate i; the same replicate index gives the same network seed
/// across grid cells, which pairs comparisons between cells.
inline std::uint64_t replicate_seed(std::uint64_t base_seed, std::uint64_t replicate) {
    return derive_seed(base_seed, {replicate});
}

struct VarianceRatioStat {
    double ratio = 0.0;
    std::size_t n_seeds = 0;
    double mean = 0.0;
    double second_moment = 0.0;
    double standard_error = 0.0;
    /// Seeds whose kernel was not finite and were dropped.
    std::size_t excluded_seeds = 0;
    /// ratio < 1 - 3 standard errors; Jensen says this is Monte-Carlo noise.
    bool jensen_violation = false;
    /// Theta(x, x) per seed, NaN for excluded seeds.
    std::vector<double> values;
};

/// E[Theta0(x,x)^2] / E[Theta0(x,x)]^2 over n_seeds independent initializations.
inline VarianceRatioStat init_variance_ratio(const Architecture& arch, const InitHyper& hyper,
                                             const Eigen::VectorXd& x, std::size_t n_seeds,
                                             std::uint64_t base_seed, unsigned threads = 1) {
    if (n_seeds < 2) throw std::invalid_argument("init_variance_ratio needs at least two seeds");
    if (x.size() != arch.input_dim) throw ShapeError("probe input does not match the input dimension");
    VarianceRatioStat stat;
    stat.values.assign(n_seeds, 0.0);
    parallel_for(n_seeds, threads, [&](std::size_t i) {
        const Mlp net(arch.widths(), hyper, replicate_seed(base_seed, i));
        const double v = kernel_diagonal(net, x);
        stat.values[i] = std::isfinite(v) ? v : std::numeric_limits<double>::quiet_NaN();
    });
    std::vector<double> kept;
    kept.reserve(n_seeds);
    for (double v : stat.values) {
        if (std::isnan(v))
            ++stat.excluded_seeds;
        else
            kept.push_back(v);
    }
    if (stat.excluded_seeds > 0 && static_cast<double>(stat.excluded_seeds) >= 0.01 * static_cast<double>(n_seeds))
        throw OverflowError(std::to_string(stat.excluded_seeds) + " of " + std::to_string(n_seeds) +
                            " seeds produced a non-finite kernel");
    const RatioEstimate est = second_moment_ratio(kept);
    stat.ratio = est.ratio;
    stat.n_seeds = kept.size();
    stat.mean = est.mean;
    stat.second_moment = est.second_moment;
    stat.standard_error = est.standard_error;
    stat.jensen_violation = est.ratio < 1.0 - 3.0 * est.standard_error;
    return stat;
}

inline const std::vector<std::int64_t> kDefaultSnapshotSteps{0, 10, 100, 1000, 10000};

struct DriftStat {
    std::vector<std::int64_t> steps;
    std::vector<double> rel_change;
    std::vector<double> losses;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::int64_t final_step = 0;
    StopReason stop_reason = StopReason::max_steps;
    /// Training hit a non-finite loss; the last entries describe the last
    /// finite state, which is one step before diverged_at.
    bool diverged = false;
    std::int64_t diverged_at = -1;
};

inline double relative_frobenius_change(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& theta0) {
    const double base = theta0.norm();
    if (!(base > 0.0)) return (theta - theta0).norm() == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return (theta - theta0).norm() / base;
}

/// Trains a freshly initialized network and records ||Theta^t - Theta^0||_F / ||Theta^0||_F
/// at step 0, at every requested snapshot step that training reaches, and at the final step.
inline DriftStat training_drift(const Architecture& arch, const InitHyper& hyper, const Dataset& data,
                                const TrainConfig& cfg, const std::vector<std::int64_t>& snapshot_steps,
                                std::uint64_t seed) {
    if (data.size() < 1) throw std::invalid_argument("training_drift needs a non-empty dataset");
    if (!std::is_sorted(snapshot_steps.begin(), snapshot_steps.end()))
        throw std::invalid_argument("snapshot steps must be sorted");
    Mlp net(arch.widths(), hyper, seed);
    std::set<std::int64_t> wanted(snapshot_steps.begin(), snapshot_steps.end());
    wanted.insert(0);

    DriftStat stat;
    Eigen::MatrixXd theta0;
    auto record = [&](std::int64_t step, const Mlp& current, double loss) {
        const Eigen::MatrixXd theta = empirical_kernel(current, data.inputs).matrix;
        if (step == 0) theta0 = theta;
        stat.steps.push_back(step);
        stat.rel_change.push_back(step == 0 ? 0.0 : relative_frobenius_change(theta, theta0));
        stat.losses.push_back(loss);
    };

    TrainingLog log;
    try {
        log = train_full_batch(net, data.inputs, data.targets, cfg, wanted, record);
        stat.stop_reason = log.reason;
    } catch (const TrainingDivergence& e) {
        log = e.log();
        stat.diverged = true;
        stat.diverged_at = e.step();
        if (log.losses.empty()) throw;
    }
    stat.initial_loss = log.losses.front();
    stat.final_loss = log.losses.back();
    stat.final_step = log.steps();
    if (stat.steps.empty() || stat.steps.back() != stat.final_step) record(stat.final_step, net, stat.final_loss);
    return stat;
}

}  // namespace ntklab
