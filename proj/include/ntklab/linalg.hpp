#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <string>

#include "ntklab/errors.hpp"

namespace ntklab {

inline constexpr double kJitterStart = 1e-12;
inline constexpr double kJitterMax = 1e-4;
inline constexpr double kPsdTolerance = 1e-8;

struct SpdSolution {
    Eigen::MatrixXd solution;
    /// Absolute diagonal shift that made the factorization succeed (0 if none).
    double jitter = 0.0;
};

/// Solves A X = B for symmetric positive-definite A. On factorization failure
/// retries with diagonal jitter 1e-12 * tr(A)/S, growing x10 up to 1e-4 * tr(A)/S.
inline SpdSolution solve_spd(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != a.cols() || a.rows() != b.rows()) throw ShapeError("solve_spd: shape mismatch");
    const auto n = a.rows();
    if (n == 0) return {Eigen::MatrixXd(0, b.cols()), 0.0};
    const double mean_diag = std::abs(a.trace()) / static_cast<double>(n);
    const double unit = mean_diag > 0.0 ? mean_diag : 1.0;

    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() == Eigen::Success) {
        Eigen::MatrixXd x = llt.solve(b);
        if (x.allFinite()) return {std::move(x), 0.0};
    }
    double jitter = kJitterStart * unit;
    for (;;) {
        Eigen::MatrixXd shifted = a;
        shifted.diagonal().array() += jitter;
        llt.compute(shifted);
        if (llt.info() == Eigen::Success) {
            Eigen::MatrixXd x = llt.solve(b);
            if (x.allFinite()) return {std::move(x), jitter};
        }
        if (jitter >= kJitterMax * unit * (1.0 - 1e-9)) break;
        jitter = std::min(jitter * 10.0, kJitterMax * unit);
    }
    throw IllConditionedError("SPD solve failed at jitter " + std::to_string(jitter), jitter);
}

inline bool is_symmetric(const Eigen::MatrixXd& m, double tol = 1e-12) {
    if (m.rows() != m.cols()) return false;
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

inline double min_eigenvalue(const Eigen::MatrixXd& m) {
    if (m.rows() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
}

/// PSD up to -kPsdTolerance * trace / S.
inline bool is_psd(const Eigen::MatrixXd& m) {
    if (m.rows() == 0) return true;
    const double floor = -kPsdTolerance * std::abs(m.trace()) / static_cast<double>(m.rows());
    return min_eigenvalue(m) >= floor;
}

}  // namespace ntklab
