#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace ntklab {

/// Quadrature rule for E[f(z)], z ~ N(0, 1).
struct GaussRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

namespace detail {

// Golub-Welsch eigenvalues of the Jacobi matrix as starting points, polished by
// Newton iteration on orthonormal Hermite polynomials (physicists' weight e^{-x^2}).
inline GaussRule compute_gauss_hermite(int n) {
    if (n < 1) throw std::invalid_argument("Gauss-Hermite rule needs at least one node");
    const double pim4 = 1.0 / std::pow(std::numbers::pi, 0.25);
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
    for (int i = 1; i < n; ++i) jacobi(i, i - 1) = jacobi(i - 1, i) = std::sqrt(0.5 * i);
    const Eigen::VectorXd guesses = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(jacobi, Eigen::EigenvaluesOnly).eigenvalues();
    std::vector<double> x(n), w(n);
    const int half = (n + 1) / 2;
    for (int i = 0; i < half; ++i) {
        double z = guesses(n - 1 - i);
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p1 = pim4, p2 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p3 = p2;
                p2 = p1;
                p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
            }
            pp = std::sqrt(2.0 * n) * p2;
            const double z1 = z;
            z = z1 - p1 / pp;
            if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) break;
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    GaussRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    // Change of variables to the standard normal measure.
    for (int i = 0; i < n; ++i) {
        rule.nodes[i] = std::numbers::sqrt2 * x[n - 1 - i];
        rule.weights[i] = w[n - 1 - i] / std::sqrt(std::numbers::pi);
    }
    return rule;
}

}  // namespace detail

/// Cached n-point Gauss-Hermite rule for the standard normal measure.
inline const GaussRule& gauss_hermite(int n = 64) {
    static std::mutex mutex;
    static std::map<int, GaussRule> cache;
    std::lock_guard lock(mutex);
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, detail::compute_gauss_hermite(n)).first;
    return it->second;
}

/// E[f(sqrt(q) z)], z ~ N(0, 1).
template <class F>
double gaussian_expectation(F&& f, double q, int nodes = 64) {
    const GaussRule& rule = gauss_hermite(nodes);
    const double scale = std::sqrt(q);
    double sum = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) sum += rule.weights[i] * f(scale * rule.nodes[i]);
    return sum;
}

/// E[f(u1, u2)] for a centered bivariate normal with variances q_s, q_r and
/// correlation c, via a tensor-product Gauss-Hermite grid:
///   u1 = sqrt(q_s) z1,  u2 = sqrt(q_r) (c z1 + sqrt(1 - c^2) z2).
template <class F>
double gaussian_expectation_2d(F&& f, double q_s, double q_r, double c, int nodes = 64) {
    const GaussRule& rule = gauss_hermite(nodes);
    const double a = std::sqrt(q_s);
    const double b = std::sqrt(q_r);
    const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
    double sum = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
        const double z1 = rule.nodes[i];
        const double u1 = a * z1;
        double inner = 0.0;
        for (std::size_t j = 0; j < rule.nodes.size(); ++j)
            inner += rule.weights[j] * f(u1, b * (c * z1 + s * rule.nodes[j]));
        sum += rule.weights[i] * inner;
    }
    return sum;
}

}  // namespace ntklab
