#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ntklab/errors.hpp"
#include "ntklab/mlp.hpp"

namespace ntklab {

struct TrainConfig {
    double learning_rate = 1e-5;
    std::int64_t max_steps = 100'000;
    double early_stop_delta = 1e-7;
    std::int64_t early_stop_patience = 100;

    void validate() const {
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
            throw ConfigError("learning rate must be finite and non-negative");
        if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
        if (!(early_stop_delta >= 0.0)) throw ConfigError("early_stop_delta must be non-negative");
        if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be at least 1");
    }
};

enum class StopReason { max_steps, early_stop, zero_gradient };

inline constexpr const char* to_string(StopReason r) noexcept {
    switch (r) {
        case StopReason::max_steps: return "max_steps";
        case StopReason::early_stop: return "early_stop";
        case StopReason::zero_gradient: return "zero_gradient";
    }
    return "?";
}

/// losses[t] is the loss after t updates; steps = losses.size() - 1.
struct TrainingLog {
    std::vector<double> losses;
    StopReason reason = StopReason::max_steps;
    std::int64_t steps() const noexcept { return static_cast<std::int64_t>(losses.size()) - 1; }
};

/// Loss became non-finite after `step` updates. The network has been rolled
/// back to the parameters of step - 1, whose loss is the last entry of log().
class TrainingDivergence : public DivergenceError {
public:
    TrainingDivergence(std::int64_t step, TrainingLog log)
        : DivergenceError("training loss became non-finite at step " + std::to_string(step),
                          log.losses.empty() ? NAN : log.losses.back()),
          step_(step),
          log_(std::move(log)) {}
    std::int64_t step() const noexcept { return step_; }
    const TrainingLog& log() const noexcept { return log_; }

private:
    std::int64_t step_;
    TrainingLog log_;
};

/// Called with (step, network, loss) at each requested step before that step's update.
using StepCallback = std::function<void(std::int64_t, const Mlp&, double)>;

/// Mean squared error (1/S) sum (f(x_s) - y_s)^2 over the columns of x.
inline double mse_loss(const Mlp& net, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    const Eigen::RowVectorXd f = net.forward_batch(x);
    return (f.transpose() - y).squaredNorm() / static_cast<double>(y.size());
}

/// Full-batch gradient descent on the mean squared error. Stops at max_steps,
/// when the gradient is exactly zero, or when the loss has not dropped by at
/// least early_stop_delta over the last early_stop_patience steps.
inline TrainingLog train_full_batch(Mlp& net, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                    const TrainConfig& cfg, const std::set<std::int64_t>& callback_steps = {},
                                    const StepCallback& callback = {}) {
    cfg.validate();
    const auto n = y.size();
    if (n < 1 || x.cols() != n) throw ShapeError("training set must have matching, non-empty X and Y");
    const double inv_n = 1.0 / static_cast<double>(n);
    const int depth = net.depth();

    TrainingLog log;
    BatchCache cache;
    std::optional<Mlp> previous;
    for (std::int64_t step = 0;; ++step) {
        const Eigen::RowVectorXd f = net.forward_batch(x, &cache);
        const Eigen::RowVectorXd residual = f - y.transpose();
        const double loss = residual.squaredNorm() * inv_n;
        if (!std::isfinite(loss)) {
            if (previous) net = std::move(*previous);
            throw TrainingDivergence(step, std::move(log));
        }
        log.losses.push_back(loss);
        if (callback && callback_steps.contains(step)) callback(step, net, loss);

        if (step >= cfg.max_steps) {
            log.reason = StopReason::max_steps;
            break;
        }
        if (step >= cfg.early_stop_patience &&
            log.losses[static_cast<std::size_t>(step - cfg.early_stop_patience)] - loss < cfg.early_stop_delta) {
            log.reason = StopReason::early_stop;
            break;
        }

        const auto delta = net.backprop_batch(cache, (2.0 * inv_n) * residual);
        bool zero = true;
        for (const auto& d : delta)
            if (!d.isZero(0.0)) {
                zero = false;
                break;
            }
        if (zero) {
            log.reason = StopReason::zero_gradient;
            break;
        }
        previous = net;
        const double lr = cfg.learning_rate;
        for (int l = 1; l <= depth; ++l) {
            const Eigen::MatrixXd& d = delta[static_cast<std::size_t>(l - 1)];
            net.weight(l).noalias() -= lr * (d * cache.post[static_cast<std::size_t>(l - 1)].transpose());
            net.bias(l).noalias() -= lr * d.rowwise().sum();
        }
    }
    return log;
}

}  // namespace ntklab
