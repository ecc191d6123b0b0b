#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace ntklab {

/// Kahan-Babuska-Neumaier compensated sum.
class NeumaierSum {
public:
    void add(double x) noexcept {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            compensation_ += (sum_ - t) + x;
        else
            compensation_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const noexcept { return sum_ + compensation_; }

private:
    double sum_ = 0.0;
    double compensation_ = 0.0;
};

/// Welford accumulator with Chan's pairwise merge.
class RunningMoments {
public:
    void add(double x) noexcept {
        ++n_;
        const double delta = x - mean_;
        mean_ += delta / static_cast<double>(n_);
        m2_ += delta * (x - mean_);
    }

    void merge(const RunningMoments& other) noexcept {
        if (other.n_ == 0) return;
        if (n_ == 0) {
            *this = other;
            return;
        }
        const double n = static_cast<double>(n_ + other.n_);
        const double delta = other.mean_ - mean_;
        mean_ += delta * static_cast<double>(other.n_) / n;
        m2_ += other.m2_ + delta * delta * static_cast<double>(n_) * static_cast<double>(other.n_) / n;
        n_ += other.n_;
    }

    std::size_t count() const noexcept { return n_; }
    double mean() const noexcept { return mean_; }
    /// Unbiased sample variance; 0 for fewer than two samples.
    double variance() const noexcept { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
    double standard_error() const noexcept {
        return n_ > 1 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0;
    }

private:
    std::size_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

struct RatioEstimate {
    double ratio;
    double mean;
    double second_moment;
    double standard_error;
};

/// E[v^2] / E[v]^2 with a delete-one jackknife standard error.
inline RatioEstimate second_moment_ratio(std::span<const double> values) {
    const std::size_t n = values.size();
    if (n < 2) throw std::invalid_argument("ratio needs at least two samples");
    NeumaierSum s1, s2;
    for (double v : values) {
        s1.add(v);
        s2.add(v * v);
    }
    const double dn = static_cast<double>(n);
    const double mean = s1.value() / dn;
    const double second = s2.value() / dn;
    const double ratio = second / (mean * mean);

    NeumaierSum jk_sum, jk_sq;
    std::vector<double> jk(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double m = (s1.value() - values[i]) / (dn - 1.0);
        const double q = (s2.value() - values[i] * values[i]) / (dn - 1.0);
        jk[i] = q / (m * m);
        jk_sum.add(jk[i]);
    }
    const double jk_mean = jk_sum.value() / dn;
    for (double r : jk) jk_sq.add((r - jk_mean) * (r - jk_mean));
    const double se = std::sqrt((dn - 1.0) / dn * jk_sq.value());
    return {ratio, mean, second, se};
}

struct LinearFit {
    double slope;
    double intercept;
    double r_squared;
};

/// Ordinary least squares y = slope * x + intercept.
inline LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("linear_fit needs matching samples");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) throw std::invalid_argument("linear_fit needs distinct x values");
    const double slope = sxy / sxx;
    const double r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
    return {slope, my - slope * mx, r2};
}

}  // namespace ntklab
