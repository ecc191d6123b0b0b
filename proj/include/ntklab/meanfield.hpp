#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "ntklab/activation.hpp"
#include "ntklab/errors.hpp"
#include "ntklab/quadrature.hpp"

namespace ntklab {

/// Initialization hyperparameters: W ~ N(0, sigma_w^2 / fan_in), b ~ N(0, sigma_b^2).
class InitHyper {
public:
    InitHyper(double sigma_w_sq, double sigma_b_sq, Activation activation)
        : sigma_w_sq_(sigma_w_sq), sigma_b_sq_(sigma_b_sq), activation_(activation) {
        if (!(sigma_w_sq > 0.0) || !std::isfinite(sigma_w_sq))
            throw std::invalid_argument("sigma_w^2 must be positive and finite");
        if (!(sigma_b_sq >= 0.0) || !std::isfinite(sigma_b_sq))
            throw std::invalid_argument("sigma_b^2 must be non-negative and finite");
    }

    double sigma_w_sq() const noexcept { return sigma_w_sq_; }
    double sigma_b_sq() const noexcept { return sigma_b_sq_; }
    Activation activation() const noexcept { return activation_; }

    bool operator==(const InitHyper&) const = default;

private:
    double sigma_w_sq_;
    double sigma_b_sq_;
    Activation activation_;
};

inline constexpr double kCorrelationTolerance = 1e-9;
inline constexpr double kPhaseTolerance = 1e-6;
inline constexpr int kFixedPointMaxIterations = 10'000;
inline constexpr double kFixedPointTolerance = 1e-12;

/// Validates a correlation and clamps floating-point drift back into [-1, 1].
inline double clamp_correlation(double c) {
    if (!(std::abs(c) <= 1.0 + kCorrelationTolerance))
        throw DomainError("correlation " + std::to_string(c) + " outside [-1, 1]");
    return std::clamp(c, -1.0, 1.0);
}

// -- Gaussian moments -------------------------------------------------------
//
// For u1 = sqrt(q_s) z1, u2 = sqrt(q_r)(c z1 + sqrt(1-c^2) z2):
//   activation_second_moment   E[phi(u1)^2]
//   derivative_second_moment   E[phi'(u1)^2]
//   activation_cross_moment    E[phi(u1) phi(u2)]
//   derivative_cross_moment    E[phi'(u1) phi'(u2)]

namespace detail {

// Exact when q_s == q_r, so that a pair of identical inputs keeps c == 1.
inline double geometric_mean(double q_s, double q_r) noexcept {
    return q_s == q_r ? q_s : std::sqrt(q_s) * std::sqrt(q_r);
}

}  // namespace detail

namespace quadrature_moments {

inline double activation_second(Activation a, double q) {
    return gaussian_expectation([a](double u) { double v = activate(a, u); return v * v; }, q);
}

inline double derivative_second(Activation a, double q) {
    return gaussian_expectation([a](double u) { double v = activate_derivative(a, u); return v * v; }, q);
}

inline double activation_cross(Activation a, double q_s, double q_r, double c) {
    return gaussian_expectation_2d(
        [a](double u1, double u2) { return activate(a, u1) * activate(a, u2); }, q_s, q_r, c);
}

inline double derivative_cross(Activation a, double q_s, double q_r, double c) {
    return gaussian_expectation_2d(
        [a](double u1, double u2) { return activate_derivative(a, u1) * activate_derivative(a, u2); },
        q_s, q_r, c);
}

}  // namespace quadrature_moments

inline double activation_second_moment(Activation a, double q) {
    switch (a) {
        case Activation::relu: return 0.5 * q;
        case Activation::erf: return 2.0 / std::numbers::pi * std::atan(q / std::sqrt(q + 0.25));
        case Activation::tanh: return quadrature_moments::activation_second(a, q);
    }
    return 0.0;
}

inline double derivative_second_moment(Activation a, double q) {
    switch (a) {
        case Activation::relu: return 0.5;
        case Activation::erf: return 2.0 / std::numbers::pi / std::sqrt(q + 0.25);
        case Activation::tanh: return quadrature_moments::derivative_second(a, q);
    }
    return 0.0;
}

inline double activation_cross_moment(Activation a, double q_s, double q_r, double c) {
    c = clamp_correlation(c);
    switch (a) {
        case Activation::relu:
            // Grouped so that c = 1 returns exactly q / 2.
            return detail::geometric_mean(q_s, q_r) *
                   (0.25 * c + (std::sqrt(1.0 - c * c) + c * std::asin(c)) / (2.0 * std::numbers::pi));
        case Activation::erf: {
            const double q_sr = c * detail::geometric_mean(q_s, q_r);
            const double det = (1.0 + 2.0 * q_s) * (1.0 + 2.0 * q_r) - 4.0 * q_sr * q_sr;
            return 2.0 / std::numbers::pi * std::atan2(2.0 * q_sr, std::sqrt(det));
        }
        case Activation::tanh: return quadrature_moments::activation_cross(a, q_s, q_r, c);
    }
    return 0.0;
}

inline double derivative_cross_moment(Activation a, double q_s, double q_r, double c) {
    c = clamp_correlation(c);
    switch (a) {
        case Activation::relu: return 0.25 + std::asin(c) / (2.0 * std::numbers::pi);
        case Activation::erf: {
            const double q_sr = c * detail::geometric_mean(q_s, q_r);
            const double det = (1.0 + 2.0 * q_s) * (1.0 + 2.0 * q_r) - 4.0 * q_sr * q_sr;
            return 4.0 / std::numbers::pi / std::sqrt(det);
        }
        case Activation::tanh: return quadrature_moments::derivative_cross(a, q_s, q_r, c);
    }
    return 0.0;
}

// -- One-layer maps -----------------------------------------------------------

struct VarianceStep {
    double q;      ///< pre-activation variance of the next layer
    double q_hat;  ///< activation variance of the current layer
};

struct CovarianceStep {
    double q_sr;
    double q_hat_sr;
};

struct BackwardStep {
    double p;
    double chi1;
};

namespace detail {

inline double require_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw OverflowError(std::string(what) + " is not finite");
    return v;
}

inline void require_positive(double v, const char* what) {
    if (!(v > 0.0)) throw std::invalid_argument(std::string(what) + " must be positive");
}

}  // namespace detail

inline VarianceStep forward_variance_step(const InitHyper& hyper, double q_prev) {
    detail::require_positive(q_prev, "q_prev");
    const double q_hat = activation_second_moment(hyper.activation(), q_prev);
    const double q = hyper.sigma_w_sq() * q_hat + hyper.sigma_b_sq();
    return {detail::require_finite(q, "forward variance"), detail::require_finite(q_hat, "activation variance")};
}

inline CovarianceStep forward_covariance_step(const InitHyper& hyper, double q_s, double q_r, double q_sr_prev) {
    detail::require_positive(q_s, "q_s");
    detail::require_positive(q_r, "q_r");
    const double c = q_sr_prev / detail::geometric_mean(q_s, q_r);
    const double q_hat_sr = activation_cross_moment(hyper.activation(), q_s, q_r, c);
    const double q_sr = hyper.sigma_w_sq() * q_hat_sr + hyper.sigma_b_sq();
    return {detail::require_finite(q_sr, "forward covariance"),
            detail::require_finite(q_hat_sr, "activation covariance")};
}

/// p = sigma_w^2 * p_next * width_ratio * E[phi'(sqrt(q) z)^2]; chi1 is the
/// width_ratio = 1 multiplier.
inline BackwardStep backward_step(const InitHyper& hyper, double q, double p_next, double width_ratio) {
    detail::require_positive(q, "q");
    detail::require_positive(p_next, "p_next");
    detail::require_positive(width_ratio, "width_ratio");
    const double chi1 = hyper.sigma_w_sq() * derivative_second_moment(hyper.activation(), q);
    const double p = chi1 * p_next * width_ratio;
    return {detail::require_finite(p, "backward variance"), detail::require_finite(chi1, "chi1")};
}

inline double backward_covariance_step(const InitHyper& hyper, double q_s, double q_r, double c,
                                       double p_sr_next, double width_ratio) {
    detail::require_positive(q_s, "q_s");
    detail::require_positive(q_r, "q_r");
    detail::require_positive(width_ratio, "width_ratio");
    const double factor = hyper.sigma_w_sq() * derivative_cross_moment(hyper.activation(), q_s, q_r, c);
    return detail::require_finite(factor * p_sr_next * width_ratio, "backward covariance");
}

// -- Layer sweeps -------------------------------------------------------------

/// How the input enters the first layer.
enum class InputLayer {
    /// Inputs are treated as layer-0 pre-activations with variance q0 and pass
    /// through the activation before the first weight layer.
    activated,
    /// Inputs feed the first weight layer directly (q_hat^0 = q0), matching
    /// the finite network engine with unit-norm inputs.
    linear,
};

/// Per-layer mean-field quantities for a pair of inputs with equal norms.
///
/// Every vector has depth + 1 entries indexed by layer l = 0..L. Layer L is
/// the scalar read-out, so f = h^L and p^L = p_sr^L = 1. Slots without a
/// meaning hold NaN: q_hat/q_hat_sr at l = L, p/p_sr at l = 0, chi1 at l = 0
/// and l = L.
struct MeanFieldTrace {
    int depth = 0;
    InputLayer input = InputLayer::activated;
    std::vector<double> q;
    std::vector<double> q_hat;
    std::vector<double> q_sr;
    std::vector<double> q_hat_sr;
    std::vector<double> c;
    std::vector<double> p;
    std::vector<double> p_sr;
    std::vector<double> chi1;
};

/// Forward sweep then backward sweep with terminal conditions p^L = p_sr^L = 1.
/// Backward width ratios are 1: with fan-in scaled weights the sum over
/// neurons in p^l absorbs the layer widths.
inline MeanFieldTrace run_trace(const InitHyper& hyper, int depth, double q0, double q0_sr,
                                InputLayer input = InputLayer::activated) {
    if (depth < 1) throw std::invalid_argument("depth must be at least 1");
    detail::require_positive(q0, "q0");
    if (!(std::abs(q0_sr) <= q0 * (1.0 + kCorrelationTolerance)))
        throw std::invalid_argument("|q0_sr| must not exceed q0");

    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    const auto n = static_cast<std::size_t>(depth) + 1;
    MeanFieldTrace t;
    t.depth = depth;
    t.input = input;
    t.q.assign(n, nan);
    t.q_hat.assign(n, nan);
    t.q_sr.assign(n, nan);
    t.q_hat_sr.assign(n, nan);
    t.c.assign(n, nan);
    t.p.assign(n, nan);
    t.p_sr.assign(n, nan);
    t.chi1.assign(n, nan);

    const Activation act = hyper.activation();
    int layer = 0;
    try {
        t.q[0] = q0;
        t.q_sr[0] = q0_sr;
        t.c[0] = clamp_correlation(q0_sr / q0);
        if (input == InputLayer::activated) {
            t.q_hat[0] = activation_second_moment(act, q0);
            t.q_hat_sr[0] = activation_cross_moment(act, q0, q0, t.c[0]);
        } else {
            t.q_hat[0] = q0;
            t.q_hat_sr[0] = q0_sr;
        }
        for (layer = 1; layer <= depth; ++layer) {
            const double q = hyper.sigma_w_sq() * t.q_hat[layer - 1] + hyper.sigma_b_sq();
            const double q_sr = hyper.sigma_w_sq() * t.q_hat_sr[layer - 1] + hyper.sigma_b_sq();
            t.q[layer] = detail::require_finite(q, "forward variance");
            t.q_sr[layer] = detail::require_finite(q_sr, "forward covariance");
            t.c[layer] = clamp_correlation(q_sr / q);
            if (layer < depth) {
                const auto next = forward_variance_step(hyper, q);
                const auto next_sr = forward_covariance_step(hyper, q, q, q_sr);
                t.q_hat[layer] = next.q_hat;
                t.q_hat_sr[layer] = next_sr.q_hat_sr;
            }
        }
        t.p[depth] = 1.0;
        t.p_sr[depth] = 1.0;
        for (layer = depth - 1; layer >= 1; --layer) {
            const auto back = backward_step(hyper, t.q[layer], t.p[layer + 1], 1.0);
            t.p[layer] = back.p;
            t.chi1[layer] = back.chi1;
            t.p_sr[layer] =
                backward_covariance_step(hyper, t.q[layer], t.q[layer], t.c[layer], t.p_sr[layer + 1], 1.0);
        }
    } catch (const OverflowError& e) {
        throw OverflowError(e.what(), layer);
    } catch (const DomainError& e) {
        throw DomainError(std::string(e.what()) + " (layer " + std::to_string(layer) + ")");
    }
    return t;
}

// -- Phase classification ------------------------------------------------------

enum class Phase { ordered, edge_of_chaos, chaotic };

inline constexpr const char* to_string(Phase p) noexcept {
    switch (p) {
        case Phase::ordered: return "ordered";
        case Phase::edge_of_chaos: return "eoc";
        case Phase::chaotic: return "chaotic";
    }
    return "?";
}

struct PhaseLabel {
    Phase phase;
    double chi1_fixed_point;
    /// q*; +inf for ReLU when the variance map has no finite fixed point.
    double q_fixed_point;
};

namespace detail {

// Bracketing fallback for fixed points that plain iteration approaches too
// slowly, which happens next to the phase border where the map's slope at q*
// tends to 1, and when sigma_b^2 = 0 drives q to 0 at a sublinear rate.
inline double bracket_fixed_point(const InitHyper& hyper, double q_last) {
    auto g = [&](double q) { return forward_variance_step(hyper, q).q - q; };
    double lo = q_last, hi = q_last;
    if (g(q_last) < 0.0) {
        while (g(lo) < 0.0) {
            lo *= 0.5;
            if (lo < 1e-300) return 0.0;
        }
    } else {
        while (g(hi) > 0.0) {
            hi *= 2.0;
            if (!std::isfinite(hi) || hi > 1e300)
                throw DivergenceError("variance fixed-point iteration did not converge", q_last);
        }
    }
    while (hi - lo > 1e-15 * hi) {
        const double mid = 0.5 * (lo + hi);
        (g(mid) > 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace detail

/// q* of the variance map by plain iteration from q = 1, falling back to
/// bisection when iteration stalls. q* = 0 is reported when the iterates
/// collapse toward zero (sigma_b^2 = 0 in the ordered phase).
inline double fixed_point_variance(const InitHyper& hyper) {
    if (hyper.activation() == Activation::relu) {
        const double slope = 0.5 * hyper.sigma_w_sq();
        if (slope < 1.0) return hyper.sigma_b_sq() / (1.0 - slope);
        if (slope == 1.0 && hyper.sigma_b_sq() == 0.0) return 1.0;  // every q is fixed
        return std::numeric_limits<double>::infinity();
    }
    double q = 1.0;
    for (int it = 0; it < kFixedPointMaxIterations; ++it) {
        const double next = forward_variance_step(hyper, q).q;
        if (std::abs(next - q) < kFixedPointTolerance * std::max(1.0, q)) return next;
        if (!(next > 0.0)) return 0.0;
        q = next;
    }
    return detail::bracket_fixed_point(hyper, q);
}

inline double chi1_at(const InitHyper& hyper, double q) {
    return hyper.sigma_w_sq() * derivative_second_moment(hyper.activation(), q);
}

inline PhaseLabel classify_phase(const InitHyper& hyper) {
    const double q_star = fixed_point_variance(hyper);
    // ReLU's chi1 does not depend on q, so an unbounded q* is still classifiable.
    const double chi1 = hyper.activation() == Activation::relu ? 0.5 * hyper.sigma_w_sq() : chi1_at(hyper, q_star);
    Phase phase = Phase::edge_of_chaos;
    if (chi1 < 1.0 - kPhaseTolerance)
        phase = Phase::ordered;
    else if (chi1 > 1.0 + kPhaseTolerance)
        phase = Phase::chaotic;
    return {phase, chi1, q_star};
}

/// sigma_w^2 at which chi1(q*) = 1, by bisection on [lo, hi]. The bracket must
/// straddle the border.
inline double locate_phase_border(Activation activation, double sigma_b_sq, double lo, double hi,
                                  double tolerance = 1e-12) {
    auto excess = [&](double sw) {
        const InitHyper h(sw, sigma_b_sq, activation);
        return classify_phase(h).chi1_fixed_point - 1.0;
    };
    double f_lo = excess(lo);
    const double f_hi = excess(hi);
    if (f_lo * f_hi > 0.0) throw std::invalid_argument("phase border is not bracketed");
    while (hi - lo > tolerance * std::max(1.0, std::abs(lo))) {
        const double mid = 0.5 * (lo + hi);
        const double f_mid = excess(mid);
        if ((f_mid < 0.0) == (f_lo < 0.0)) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

}  // namespace ntklab
