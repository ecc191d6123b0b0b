#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "ntklab/errors.hpp"
#include "ntklab/linalg.hpp"
#include "ntklab/meanfield.hpp"
#include "ntklab/parallel.hpp"
#include "ntklab/random.hpp"
#include "ntklab/stats.hpp"

namespace ntklab {

/// Depth-summed NTK scales for one input (kappa1) and one input pair (kappa2).
///
/// The infinite-width kernel is Theta(s, r) = alpha * M * kappa + bias, where
/// bias = sum_l p^l (diagonal) or sum_l p_sr^l (off-diagonal) is the exact
/// contribution of the bias parameters. The *_bar fields hold the
/// data-independent limits; when the pair comes from a reference trace they
/// coincide with the plain fields.
struct KappaPair {
    double kappa1 = 0.0;
    double kappa2 = 0.0;
    double kappa1_bar = 0.0;
    double kappa2_bar = 0.0;
    double bias1 = 0.0;
    double bias2 = 0.0;
};

/// alpha_l = M_l / M for l = 0..L-1 in a network whose hidden layers all have
/// width M. In linear input mode the first layer sees unit-norm inputs with
/// unscaled weights, which acts like an input of width 1.
inline std::vector<double> equal_width_fractions(int depth, InputLayer input, double width) {
    if (depth < 1) throw std::invalid_argument("depth must be at least 1");
    if (!(width > 0.0)) throw std::invalid_argument("width must be positive");
    std::vector<double> fractions(static_cast<std::size_t>(depth), 1.0);
    if (input == InputLayer::linear) fractions[0] = 1.0 / width;
    return fractions;
}

/// alpha = sum_{l=1}^{L-1} alpha_l alpha_{l-1}; for L = 1 there is no hidden
/// pair and alpha_0 is used instead (alpha cancels in alpha * M * kappa).
inline double width_alpha(std::span<const double> fractions) {
    if (fractions.empty()) throw ShapeError("width fractions are empty");
    if (fractions.size() == 1) return fractions[0];
    double alpha = 0.0;
    for (std::size_t l = 1; l < fractions.size(); ++l) alpha += fractions[l] * fractions[l - 1];
    return alpha;
}

inline KappaPair compute_kappas(const MeanFieldTrace& trace, std::span<const double> fractions) {
    if (fractions.size() != static_cast<std::size_t>(trace.depth))
        throw ShapeError("expected " + std::to_string(trace.depth) + " width fractions, got " +
                         std::to_string(fractions.size()));
    for (double a : fractions)
        if (!(a > 0.0)) throw std::invalid_argument("width fractions must be positive");
    const double alpha = width_alpha(fractions);
    KappaPair k;
    for (int l = 1; l <= trace.depth; ++l) {
        const double w = fractions[static_cast<std::size_t>(l - 1)] / alpha;
        k.kappa1 += w * trace.q_hat[l - 1] * trace.p[l];
        k.kappa2 += w * trace.q_hat_sr[l - 1] * trace.p_sr[l];
        k.bias1 += trace.p[l];
        k.bias2 += trace.p_sr[l];
    }
    k.kappa1_bar = k.kappa1;
    k.kappa2_bar = k.kappa2;
    return k;
}

inline constexpr double kDefaultReferenceCovariance = 0.5;

/// Trace from q0 = 1 at the reference covariance; its depth-L values stand in
/// for the data-independent limits.
inline MeanFieldTrace reference_trace(const InitHyper& hyper, int depth,
                                      double reference_covariance = kDefaultReferenceCovariance,
                                      InputLayer input = InputLayer::activated) {
    return run_trace(hyper, depth, 1.0, reference_covariance, input);
}

struct ConditionRatio {
    /// kappa1_bar / kappa2_bar, +inf when kappa2_bar = 0.
    double ratio;
    /// Condition number of the mean part, (k1 + (S-1) k2) / (k1 - k2); +inf
    /// when the mean part is singular.
    double condition_number;
    bool kappa2_zero;
};

/// A ratio near 1 means the mean part of Theta* is close to rank one.
inline ConditionRatio condition_ratio(const KappaPair& k, std::size_t sample_count) {
    if (sample_count < 1) throw std::invalid_argument("sample count must be positive");
    constexpr double inf = std::numeric_limits<double>::infinity();
    const double s = static_cast<double>(sample_count);
    const double k1 = k.kappa1_bar, k2 = k.kappa2_bar;
    const double gap = k1 - k2;
    const double cond = sample_count == 1 ? 1.0 : (gap > 0.0 ? (k1 + (s - 1.0) * k2) / gap : inf);
    if (k2 == 0.0) return {inf, cond, true};
    return {k1 / k2, cond, false};
}

// -- Pairwise traces over a dataset --------------------------------------------

/// Mean-field traces for every unordered pair (s, r), s <= r, of a dataset
/// described by its input Gram matrix. All inputs must share one squared norm.
class PairTraceTable {
public:
    PairTraceTable(const InitHyper& hyper, int depth, const Eigen::MatrixXd& gram, InputLayer input,
                   unsigned threads = 1)
        : size_(gram.rows()), depth_(depth), input_(input) {
        if (gram.rows() != gram.cols()) throw ShapeError("Gram matrix must be square");
        if (size_ == 0) return;
        const double q0 = gram(0, 0);
        for (Eigen::Index s = 1; s < size_; ++s)
            if (std::abs(gram(s, s) - q0) > 1e-9 * q0)
                throw std::invalid_argument("all inputs must have the same norm");
        const auto n = static_cast<std::size_t>(size_ * (size_ + 1) / 2);
        traces_.resize(n);
        const MeanFieldTrace diagonal = run_trace(hyper, depth, q0, q0, input);
        parallel_for(static_cast<std::size_t>(size_), threads, [&](std::size_t si) {
            const auto s = static_cast<Eigen::Index>(si);
            for (Eigen::Index r = s; r < size_; ++r) {
                const double cov = r == s ? q0 : gram(s, r);
                traces_[index(s, r)] = r == s ? diagonal : run_trace(hyper, depth, q0, cov, input);
            }
        });
    }

    Eigen::Index size() const noexcept { return size_; }
    int depth() const noexcept { return depth_; }
    InputLayer input() const noexcept { return input_; }

    const MeanFieldTrace& at(Eigen::Index s, Eigen::Index r) const {
        if (s > r) std::swap(s, r);
        return traces_.at(index(s, r));
    }

private:
    std::size_t index(Eigen::Index s, Eigen::Index r) const noexcept {
        return static_cast<std::size_t>(s * size_ - s * (s - 1) / 2 + (r - s));
    }

    Eigen::Index size_;
    int depth_;
    InputLayer input_;
    std::vector<MeanFieldTrace> traces_;
};

/// kappa on the diagonal holds kappa1(x_s), off-diagonal kappa2(x_s, x_r);
/// bias likewise holds sum_l p^l and sum_l p_sr^l.
struct PairwiseKappas {
    Eigen::MatrixXd kappa;
    Eigen::MatrixXd bias;
};

inline PairwiseKappas pairwise_kappas(const PairTraceTable& table, std::span<const double> fractions) {
    const auto n = table.size();
    PairwiseKappas out{Eigen::MatrixXd(n, n), Eigen::MatrixXd(n, n)};
    for (Eigen::Index s = 0; s < n; ++s) {
        for (Eigen::Index r = s; r < n; ++r) {
            const KappaPair k = compute_kappas(table.at(s, r), fractions);
            const double kappa = r == s ? k.kappa1 : k.kappa2;
            const double bias = r == s ? k.bias1 : k.bias2;
            out.kappa(s, r) = out.kappa(r, s) = kappa;
            out.bias(s, r) = out.bias(r, s) = bias;
        }
    }
    return out;
}

// -- Theta* ------------------------------------------------------------------

/// Parameters of the data-independent part (theta1 - theta2) I + theta2 11^T,
/// with theta_i = scale * kappa_i_bar + bias_i_bar.
struct MeanPart {
    double kappa1_bar = 0.0;
    double kappa2_bar = 0.0;
    double theta1 = 0.0;
    double theta2 = 0.0;
    Eigen::Index size = 0;

    Eigen::MatrixXd matrix() const {
        Eigen::MatrixXd m = Eigen::MatrixXd::Constant(size, size, theta2);
        m.diagonal().setConstant(theta1);
        return m;
    }

    /// Closed-form inverse by the Woodbury identity.
    Eigen::MatrixXd inverse() const {
        const double gap = theta1 - theta2;
        const double denom = theta1 + static_cast<double>(size - 1) * theta2;
        if (!(gap != 0.0) || !(denom != 0.0)) throw IllConditionedError("mean part of Theta* is singular", 0.0);
        Eigen::MatrixXd m = Eigen::MatrixXd::Constant(size, size, -theta2 / denom);
        m.diagonal().array() += 1.0;
        return m / gap;
    }

    /// theta1 / theta2, the ratio that enters the variance prediction.
    double effective_ratio() const noexcept {
        return theta2 == 0.0 ? std::numeric_limits<double>::infinity() : theta1 / theta2;
    }
};

struct ThetaStar {
    Eigen::MatrixXd matrix;
    /// alpha * M.
    double scale = 0.0;
    double alpha = 0.0;
    MeanPart mean_part;
    /// epsilon with matrix = mean_part.matrix() * (I + epsilon).
    Eigen::MatrixXd perturbation;
};

/// Assembles Theta* = alpha M Lambda + bias terms and its decomposition around
/// the mean part built from the reference kappas. A singular mean part (for
/// instance kappa1_bar = kappa2_bar with no bias) leaves the perturbation empty.
inline ThetaStar build_theta_star(const PairwiseKappas& kappas, double width, double alpha,
                                  const KappaPair& reference) {
    const auto n = kappas.kappa.rows();
    if (n < 1) throw std::invalid_argument("Theta* needs at least one sample");
    if (kappas.kappa.cols() != n || kappas.bias.rows() != n || kappas.bias.cols() != n)
        throw ShapeError("pairwise kappa matrices must be square and of equal size");
    if (!(width > 0.0) || !(alpha > 0.0)) throw std::invalid_argument("width and alpha must be positive");
    ThetaStar t;
    t.alpha = alpha;
    t.scale = alpha * width;
    t.matrix = t.scale * kappas.kappa + kappas.bias;
    t.matrix = 0.5 * (t.matrix + t.matrix.transpose()).eval();
    t.mean_part.kappa1_bar = reference.kappa1_bar;
    t.mean_part.kappa2_bar = reference.kappa2_bar;
    t.mean_part.theta1 = t.scale * reference.kappa1_bar + reference.bias1;
    t.mean_part.theta2 = t.scale * reference.kappa2_bar + reference.bias2;
    t.mean_part.size = n;
    if (n == 1) {
        // A single sample has no off-diagonal structure: the mean part is the kernel itself.
        t.mean_part.theta1 = t.matrix(0, 0);
        t.perturbation = Eigen::MatrixXd::Zero(1, 1);
        return t;
    }
    try {
        t.perturbation = t.mean_part.inverse() * t.matrix;
        t.perturbation.diagonal().array() -= 1.0;
    } catch (const IllConditionedError&) {
        t.perturbation.resize(0, 0);
    }
    return t;
}

// -- NNGP ------------------------------------------------------------------

struct NngpMatrix {
    Eigen::MatrixXd matrix;
};

inline NngpMatrix nngp_matrix(const PairTraceTable& table) {
    const auto n = table.size();
    const int depth = table.depth();
    NngpMatrix k{Eigen::MatrixXd(n, n)};
    for (Eigen::Index s = 0; s < n; ++s)
        for (Eigen::Index r = s; r < n; ++r) {
            const MeanFieldTrace& t = table.at(s, r);
            k.matrix(s, r) = k.matrix(r, s) = r == s ? t.q[depth] : t.q_sr[depth];
        }
    return k;
}

// -- Trained output and variance ---------------------------------------------------

/// Kernel-regression output after training to convergence:
///   Theta(x, X) Theta(X)^{-1} (Y - f0(X)) + f0(x).
inline double trained_output(const Eigen::MatrixXd& theta, const Eigen::VectorXd& theta_x, double f0_x,
                             const Eigen::VectorXd& f0_X, const Eigen::VectorXd& y) {
    const auto n = theta.rows();
    if (theta.cols() != n || theta_x.size() != n || f0_X.size() != n || y.size() != n)
        throw ShapeError("trained_output: inconsistent dimensions");
    const Eigen::VectorXd residual = y - f0_X;
    const SpdSolution sol = solve_spd(theta, residual);
    return theta_x.dot(sol.solution.col(0)) + f0_x;
}

struct VariancePrediction {
    double A;
    double variance;
    double q_bar_L;
    double q_bar_sr_L;
};

/// Var = (1 + A^2/S)(q_bar - q_bar_sr) + (A - 1)^2 q_bar_sr with
/// A = S / (ratio + S - 1); ratio = +inf gives A = 0.
inline VariancePrediction predict_variance(double ratio, double q_bar_L, double q_bar_sr_L,
                                           std::size_t sample_count) {
    if (sample_count < 1) throw std::invalid_argument("sample count must be positive");
    if (!(ratio >= 1.0)) throw std::invalid_argument("kappa ratio must be at least 1");
    if (!(q_bar_sr_L >= 0.0) || !(q_bar_L >= q_bar_sr_L))
        throw std::invalid_argument("need q_bar_L >= q_bar_sr_L >= 0");
    const double s = static_cast<double>(sample_count);
    const double a = std::isinf(ratio) ? 0.0 : s / (ratio + s - 1.0);
    // At A = 0 the two terms recombine to q_bar_L; return it directly so the limit is exact.
    const double var =
        a == 0.0 ? q_bar_L : (1.0 + a * a / s) * (q_bar_L - q_bar_sr_L) + (a - 1.0) * (a - 1.0) * q_bar_sr_L;
    return {a, var, q_bar_L, q_bar_sr_L};
}

inline VariancePrediction predict_variance(const KappaPair& k, double q_bar_L, double q_bar_sr_L,
                                           std::size_t sample_count) {
    const ConditionRatio c = condition_ratio(k, sample_count);
    return predict_variance(c.ratio, q_bar_L, q_bar_sr_L, sample_count);
}

struct MonteCarloVariance {
    double variance = 0.0;
    double standard_error = 0.0;
    std::size_t n_samples = 0;
    double min_eigenvalue = 0.0;
    /// Set when clipping removed a negative eigenvalue beyond tolerance.
    bool psd_warning = false;
};

inline constexpr std::size_t kMonteCarloChunk = 4096;

/// Brute-force variance of the trained output over f0 ~ N(0, joint NNGP).
/// joint_nngp covers X followed by the test point (index S). Samples are drawn
/// in fixed chunks keyed by chunk index and merged in chunk order, so the
/// result does not depend on the thread count.
inline MonteCarloVariance variance_oracle_mc(const Eigen::MatrixXd& theta, const Eigen::VectorXd& theta_x,
                                             const Eigen::MatrixXd& joint_nngp, std::size_t n_samples,
                                             std::uint64_t seed, unsigned threads = 1) {
    const auto s = theta.rows();
    if (theta.cols() != s || theta_x.size() != s || joint_nngp.rows() != s + 1 || joint_nngp.cols() != s + 1)
        throw ShapeError("variance_oracle_mc: inconsistent dimensions");
    if (n_samples < 1) throw std::invalid_argument("n_samples must be positive");

    MonteCarloVariance out;
    out.n_samples = n_samples;
    const double trace = joint_nngp.trace();
    if (trace == 0.0 && joint_nngp.cwiseAbs().maxCoeff() == 0.0) return out;
    if (!joint_nngp.allFinite()) throw IllConditionedError("joint NNGP covariance is not finite", 0.0);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (joint_nngp + joint_nngp.transpose()));
    if (es.info() != Eigen::Success) throw IllConditionedError("PSD repair failed on joint covariance", 0.0);
    Eigen::VectorXd eig = es.eigenvalues();
    out.min_eigenvalue = eig(0);
    if (eig(0) < -kPsdTolerance * std::abs(trace) / static_cast<double>(s + 1)) out.psd_warning = true;
    eig = eig.cwiseMax(0.0);
    const Eigen::MatrixXd factor = es.eigenvectors() * eig.cwiseSqrt().asDiagonal();

    // out = f0(x) - v^T f0(X), v = Theta^{-1} Theta(X, x); Y drops out of the variance.
    const Eigen::VectorXd v = solve_spd(theta, theta_x).solution.col(0);
    Eigen::VectorXd w(s + 1);
    w.head(s) = -v;
    w(s) = 1.0;
    const Eigen::RowVectorXd projection = w.transpose() * factor;

    const std::size_t chunks = (n_samples + kMonteCarloChunk - 1) / kMonteCarloChunk;
    std::vector<RunningMoments> partial(chunks);
    parallel_for(chunks, threads, [&](std::size_t c) {
        RandomStream rng(seed, c);
        const std::size_t begin = c * kMonteCarloChunk;
        const std::size_t end = std::min(n_samples, begin + kMonteCarloChunk);
        Eigen::VectorXd z(s + 1);
        for (std::size_t i = begin; i < end; ++i) {
            for (Eigen::Index j = 0; j <= s; ++j) z(j) = rng.normal();
            partial[c].add(projection.dot(z));
        }
    });
    RunningMoments total;
    for (const auto& p : partial) total.merge(p);
    out.variance = total.variance();
    // Standard error of the sample variance under a Gaussian output.
    out.standard_error = out.variance * std::sqrt(2.0 / static_cast<double>(std::max<std::size_t>(n_samples, 2) - 1));
    return out;
}

}  // namespace ntklab
