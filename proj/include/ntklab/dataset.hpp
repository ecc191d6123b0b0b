#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ntklab/errors.hpp"
#include "ntklab/random.hpp"

namespace ntklab {

/// Inputs are the columns of `inputs` (M_0 x S).
struct Dataset {
    Eigen::MatrixXd inputs;
    Eigen::VectorXd targets;
    bool normalized = false;

    Eigen::Index size() const noexcept { return targets.size(); }
    Eigen::Index dim() const noexcept { return inputs.rows(); }
    Eigen::MatrixXd gram() const { return inputs.transpose() * inputs; }
};

/// Scales every column to unit Euclidean norm.
inline void normalize_columns(Eigen::MatrixXd& x) {
    for (Eigen::Index s = 0; s < x.cols(); ++s) {
        const double norm = x.col(s).norm();
        if (!(norm > 0.0)) throw std::invalid_argument("cannot normalize a zero input");
        x.col(s) /= norm;
    }
}

// -- Digit targets -------------------------------------------------------------

enum class TargetEncoder {
    /// digit / 9, in [0, 1]
    scaled_digit,
    /// digit as is, in {0, ..., 9}
    raw_digit,
    /// +1 for even digits, -1 for odd
    parity,
};

inline double encode_target(TargetEncoder e, int digit) {
    switch (e) {
        case TargetEncoder::scaled_digit: return digit / 9.0;
        case TargetEncoder::raw_digit: return static_cast<double>(digit);
        case TargetEncoder::parity: return digit % 2 == 0 ? 1.0 : -1.0;
    }
    return 0.0;
}

inline TargetEncoder parse_target_encoder(std::string_view name) {
    if (name == "scaled_digit") return TargetEncoder::scaled_digit;
    if (name == "raw_digit") return TargetEncoder::raw_digit;
    if (name == "parity") return TargetEncoder::parity;
    throw std::invalid_argument("unknown target encoder '" + std::string(name) + "'");
}

// -- IDX files -----------------------------------------------------------------

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct IdxImages {
    std::uint32_t count = 0;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<std::uint8_t> pixels;  // count * rows * cols, image-major
};

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& what) {
    std::array<unsigned char, 4> b{};
    in.read(reinterpret_cast<char*>(b.data()), 4);
    if (!in) throw FormatError("truncated IDX header in " + what);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                                static_cast<char>(v)};
    out.write(b.data(), 4);
}

inline std::ifstream open_binary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return in;
}

}  // namespace detail

inline IdxImages read_idx_images(const std::filesystem::path& path) {
    auto in = detail::open_binary(path);
    const std::string name = path.string();
    const std::uint32_t magic = detail::read_be32(in, name);
    if (magic != kIdxImageMagic) throw FormatError("bad IDX image magic in " + name);
    IdxImages img;
    img.count = detail::read_be32(in, name);
    img.rows = detail::read_be32(in, name);
    img.cols = detail::read_be32(in, name);
    const std::uint64_t n = std::uint64_t{img.count} * img.rows * img.cols;
    img.pixels.resize(n);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::uint64_t>(in.gcount()) != n) throw FormatError("truncated IDX image data in " + name);
    return img;
}

inline std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
    auto in = detail::open_binary(path);
    const std::string name = path.string();
    const std::uint32_t magic = detail::read_be32(in, name);
    if (magic != kIdxLabelMagic) throw FormatError("bad IDX label magic in " + name);
    const std::uint32_t count = detail::read_be32(in, name);
    std::vector<std::uint8_t> labels(count);
    in.read(reinterpret_cast<char*>(labels.data()), count);
    if (static_cast<std::uint32_t>(in.gcount()) != count) throw FormatError("truncated IDX label data in " + name);
    return labels;
}

inline void write_idx_images(const std::filesystem::path& path, const IdxImages& img) {
    if (img.pixels.size() != std::size_t{img.count} * img.rows * img.cols) throw ShapeError("IDX pixel count mismatch");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    detail::write_be32(out, kIdxImageMagic);
    detail::write_be32(out, img.count);
    detail::write_be32(out, img.rows);
    detail::write_be32(out, img.cols);
    out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

inline void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    detail::write_be32(out, kIdxLabelMagic);
    detail::write_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

inline constexpr std::string_view kMnistImagesFile = "train-images-idx3-ubyte";
inline constexpr std::string_view kMnistLabelsFile = "train-labels-idx1-ubyte";

/// `count` distinct images drawn by a seeded partial Fisher-Yates shuffle.
/// Pixels are scaled to [0, 1], then optionally to unit norm.
inline Dataset load_mnist_subset(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                                 std::size_t count, std::uint64_t seed, bool normalize = true,
                                 TargetEncoder encoder = TargetEncoder::scaled_digit) {
    const IdxImages img = read_idx_images(images_path);
    const auto labels = read_idx_labels(labels_path);
    if (labels.size() != img.count) throw FormatError("image and label counts differ");
    if (count > img.count)
        throw std::invalid_argument("requested " + std::to_string(count) + " samples but only " +
                                    std::to_string(img.count) + " are available");
    const std::size_t dim = std::size_t{img.rows} * img.cols;
    std::vector<std::uint32_t> order(img.count);
    std::iota(order.begin(), order.end(), 0u);
    RandomStream rng(seed, 0x4D4E495354ull);
    for (std::size_t i = 0; i < count; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(img.count - i));
        std::swap(order[i], order[j]);
    }
    Dataset d;
    d.inputs.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(count));
    d.targets.resize(static_cast<Eigen::Index>(count));
    for (std::size_t s = 0; s < count; ++s) {
        const std::uint8_t* px = img.pixels.data() + std::size_t{order[s]} * dim;
        for (std::size_t k = 0; k < dim; ++k)
            d.inputs(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(s)) = px[k] / 255.0;
        const int digit = labels[order[s]];
        if (digit > 9) throw FormatError("label " + std::to_string(digit) + " is not a digit");
        d.targets(static_cast<Eigen::Index>(s)) = encode_target(encoder, digit);
    }
    if (normalize) normalize_columns(d.inputs);
    d.normalized = normalize;
    return d;
}

/// Directory variant: expects the standard training-set file names.
inline Dataset load_mnist_subset(const std::filesystem::path& dir, std::size_t count, std::uint64_t seed,
                                 bool normalize = true, TargetEncoder encoder = TargetEncoder::scaled_digit) {
    return load_mnist_subset(dir / kMnistImagesFile, dir / kMnistLabelsFile, count, seed, normalize, encoder);
}

// -- Synthetic data ------------------------------------------------------------

namespace detail {

inline Eigen::VectorXd gaussian_vector(RandomStream& rng, Eigen::Index dim) {
    Eigen::VectorXd v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) v(i) = rng.normal();
    return v;
}

}  // namespace detail

/// Two unit vectors with x_s . x_r = c, built by Gram-Schmidt on two Gaussian draws.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> synthetic_pair(Eigen::Index dim, double c, std::uint64_t seed) {
    if (dim < 2) throw std::invalid_argument("synthetic_pair needs dim >= 2");
    if (!(c >= -1.0 && c <= 1.0)) throw std::invalid_argument("covariance must lie in [-1, 1]");
    RandomStream rng(seed, 0x5041495200ull);
    Eigen::VectorXd u = detail::gaussian_vector(rng, dim);
    u.normalize();
    Eigen::VectorXd v = detail::gaussian_vector(rng, dim);
    for (int pass = 0; pass < 2; ++pass) v -= u.dot(v) * u;
    v.normalize();
    if (c == 1.0) return {u, u};
    Eigen::VectorXd r = c * u + std::sqrt(1.0 - c * c) * v;
    r.normalize();
    return {u, r};
}

/// S unit vectors whose pairwise dot products concentrate around rho:
/// x_s = normalize(sqrt(rho) u + sqrt(1 - rho) z_s / sqrt(dim)) with a shared
/// random unit direction u. Targets come from a random teacher,
/// y = (1 + tanh(t . x)) / 2 with t ~ N(0, I).
inline Dataset synthetic_dataset(Eigen::Index count, Eigen::Index dim, double rho, std::uint64_t seed) {
    if (count < 0 || dim < 1) throw std::invalid_argument("synthetic_dataset needs count >= 0 and dim >= 1");
    if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("rho must lie in [0, 1]");
    RandomStream shared(seed, 0x5348415245ull);
    Eigen::VectorXd u = detail::gaussian_vector(shared, dim);
    u.normalize();
    const Eigen::VectorXd teacher = detail::gaussian_vector(shared, dim);
    Dataset d;
    d.inputs.resize(dim, count);
    d.targets.resize(count);
    for (Eigen::Index s = 0; s < count; ++s) {
        RandomStream rng(seed, static_cast<std::uint64_t>(s));
        const Eigen::VectorXd z = detail::gaussian_vector(rng, dim) / std::sqrt(static_cast<double>(dim));
        Eigen::VectorXd x = std::sqrt(rho) * u + std::sqrt(1.0 - rho) * z;
        x.normalize();
        d.inputs.col(s) = x;
        d.targets(s) = 0.5 * (1.0 + std::tanh(teacher.dot(x)));
    }
    d.normalized = true;
    return d;
}

/// A fixed unit-norm probe input derived from a seed.
inline Eigen::VectorXd probe_input(Eigen::Index dim, std::uint64_t seed) {
    RandomStream rng(seed, 0x50524F4245ull);
    Eigen::VectorXd x = detail::gaussian_vector(rng, dim);
    x.normalize();
    return x;
}

/// Order-sensitive FNV-1a checksum over the bit patterns of inputs and targets.
inline std::uint64_t dataset_checksum(const Dataset& d) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](double v) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) {
            h ^= (bits >> (8 * i)) & 0xFF;
            h *= 0x100000001b3ull;
        }
    };
    for (Eigen::Index s = 0; s < d.inputs.cols(); ++s)
        for (Eigen::Index k = 0; k < d.inputs.rows(); ++k) mix(d.inputs(k, s));
    for (Eigen::Index s = 0; s < d.targets.size(); ++s) mix(d.targets(s));
    return h;
}

}  // namespace ntklab
