#pragma once

#include <Eigen/Dense>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "ntklab/activation.hpp"
#include "ntklab/errors.hpp"
#include "ntklab/meanfield.hpp"
#include "ntklab/random.hpp"

namespace ntklab {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Elementwise activation on a matrix.
inline Eigen::MatrixXd apply_activation(Activation a, const Eigen::MatrixXd& h) {
    switch (a) {
        case Activation::relu: return h.cwiseMax(0.0);
        case Activation::erf: return h.unaryExpr([](double x) { return std::erf(x); });
        case Activation::tanh: {
            const Eigen::ArrayXXd e = (2.0 * h.array().max(-40.0).min(40.0)).exp();
            Eigen::MatrixXd out = ((e - 1.0) / (e + 1.0)).matrix();
            const double* src = h.data();
            double* dst = out.data();
            for (Eigen::Index i = 0; i < h.size(); ++i)
                if (!(std::abs(src[i]) >= 0.25)) dst[i] = std::tanh(src[i]);
            return out;
        }
    }
    return h;
}

/// phi'(h), reusing phi(h) where that is cheaper.
inline Eigen::MatrixXd activation_derivative(Activation a, const Eigen::MatrixXd& h, const Eigen::MatrixXd& post) {
    switch (a) {
        case Activation::relu: return (h.array() > 0.0).cast<double>().matrix();
        case Activation::erf: {
            const double k = 2.0 / std::sqrt(std::numbers::pi);
            return (k * (-h.array().square()).exp()).matrix();
        }
        case Activation::tanh: return (1.0 - post.array().square()).matrix();
    }
    return h;
}

/// Pre- and post-activations of one forward pass over a batch (columns are samples).
/// post[0] is the input; pre[l] and post[l] belong to layer l, post[L] is unused.
struct BatchCache {
    std::vector<Eigen::MatrixXd> pre;
    std::vector<Eigen::MatrixXd> post;
};

struct ForwardResult {
    double output;
    BatchCache cache;
};

/// Fully-connected network with widths (M_0, M_1, ..., M_{L-1}, 1) and a linear
/// scalar read-out f = h^L.
///
/// Initialization: W^1 ~ N(0, sigma_w^2) entrywise, so a unit-norm input gives
/// Var h^1 = sigma_w^2 ||x||^2 + sigma_b^2; W^l ~ N(0, sigma_w^2 / M_{l-1}) for
/// l >= 2; b^l ~ N(0, sigma_b^2). Entry (i, j) of W^l is the normal at index
/// i * M_{l-1} + j of Philox stream 2l, bias i the normal at index i of
/// stream 2l + 1.
///
/// Flat parameter layout (gradients and checkpoints): layer-major, l = 1..L,
/// each layer W^l in row-major order followed by b^l.
class Mlp {
public:
    Mlp(std::vector<int> widths, const InitHyper& hyper, std::uint64_t seed)
        : widths_(std::move(widths)), hyper_(hyper), seed_(seed) {
        validate_widths(widths_);
        const int depth = this->depth();
        weights_.resize(static_cast<std::size_t>(depth));
        biases_.resize(static_cast<std::size_t>(depth));
        const double sw = std::sqrt(hyper_.sigma_w_sq());
        const double sb = std::sqrt(hyper_.sigma_b_sq());
        for (int l = 1; l <= depth; ++l) {
            const int fan_out = widths_[static_cast<std::size_t>(l)];
            const int fan_in = widths_[static_cast<std::size_t>(l - 1)];
            const double scale = l == 1 ? sw : sw / std::sqrt(static_cast<double>(fan_in));
            RowMatrix& w = weights_[static_cast<std::size_t>(l - 1)];
            w.resize(fan_out, fan_in);
            const auto w_stream = static_cast<std::uint64_t>(2 * l);
            fill_normals(seed_, w_stream, scale, w.data(), static_cast<std::size_t>(w.size()));
            Eigen::VectorXd& b = biases_[static_cast<std::size_t>(l - 1)];
            b.resize(fan_out);
            fill_normals(seed_, w_stream + 1, sb, b.data(), static_cast<std::size_t>(fan_out));
        }
    }

    /// Convenience constructor: input dim, L - 1 hidden layers of width M, scalar read-out.
    static std::vector<int> uniform_widths(int input_dim, int width, int depth) {
        if (depth < 1) throw std::invalid_argument("depth must be at least 1");
        std::vector<int> w;
        w.push_back(input_dim);
        for (int l = 1; l < depth; ++l) w.push_back(width);
        w.push_back(1);
        return w;
    }

    const std::vector<int>& widths() const noexcept { return widths_; }
    int depth() const noexcept { return static_cast<int>(widths_.size()) - 1; }
    int input_dim() const noexcept { return widths_.front(); }
    const InitHyper& hyper() const noexcept { return hyper_; }
    Activation activation() const noexcept { return hyper_.activation(); }
    std::uint64_t seed() const noexcept { return seed_; }

    /// Layer l = 1..L.
    const RowMatrix& weight(int l) const { return weights_.at(static_cast<std::size_t>(l - 1)); }
    RowMatrix& weight(int l) { return weights_.at(static_cast<std::size_t>(l - 1)); }
    const Eigen::VectorXd& bias(int l) const { return biases_.at(static_cast<std::size_t>(l - 1)); }
    Eigen::VectorXd& bias(int l) { return biases_.at(static_cast<std::size_t>(l - 1)); }

    std::int64_t parameter_count() const noexcept {
        std::int64_t n = 0;
        for (std::size_t l = 0; l < weights_.size(); ++l) n += weights_[l].size() + biases_[l].size();
        return n;
    }

    Eigen::VectorXd parameters() const {
        Eigen::VectorXd flat(parameter_count());
        std::int64_t pos = 0;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            flat.segment(pos, weights_[l].size()) = Eigen::Map<const Eigen::VectorXd>(weights_[l].data(), weights_[l].size());
            pos += weights_[l].size();
            flat.segment(pos, biases_[l].size()) = biases_[l];
            pos += biases_[l].size();
        }
        return flat;
    }

    void set_parameters(const Eigen::VectorXd& flat) {
        if (flat.size() != parameter_count()) throw ShapeError("parameter vector has wrong length");
        std::int64_t pos = 0;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            Eigen::Map<Eigen::VectorXd>(weights_[l].data(), weights_[l].size()) = flat.segment(pos, weights_[l].size());
            pos += weights_[l].size();
            biases_[l] = flat.segment(pos, biases_[l].size());
            pos += biases_[l].size();
        }
    }

    /// Forward pass over the columns of x (M_0 x S). Returns the 1 x S outputs.
    Eigen::RowVectorXd forward_batch(const Eigen::MatrixXd& x, BatchCache* cache = nullptr) const {
        if (x.rows() != input_dim()) throw ShapeError("input dimension " + std::to_string(x.rows()) +
                                                      " does not match network input " + std::to_string(input_dim()));
        const int depth = this->depth();
        if (cache) {
            cache->pre.assign(static_cast<std::size_t>(depth) + 1, Eigen::MatrixXd());
            cache->post.assign(static_cast<std::size_t>(depth) + 1, Eigen::MatrixXd());
            cache->post[0] = x;
        }
        Eigen::MatrixXd a = x;
        Eigen::MatrixXd h;
        for (int l = 1; l <= depth; ++l) {
            h.noalias() = weight(l) * a;
            h.colwise() += bias(l);
            if (l == depth) break;
            a = apply_activation(activation(), h);
            if (cache) {
                cache->pre[static_cast<std::size_t>(l)] = h;
                cache->post[static_cast<std::size_t>(l)] = a;
            }
        }
        if (cache) cache->pre[static_cast<std::size_t>(depth)] = h;
        return h.row(0);
    }

    ForwardResult forward(const Eigen::VectorXd& x) const {
        ForwardResult r;
        r.output = forward_batch(x, &r.cache)(0);
        return r;
    }

    double output(const Eigen::VectorXd& x) const { return forward_batch(x)(0); }

    /// Backpropagates per-sample output sensitivities `top` (1 x S) and returns
    /// delta^l = d(top . f) / d h^l for l = 1..L (index l - 1), each M_l x S.
    std::vector<Eigen::MatrixXd> backprop_batch(const BatchCache& cache, const Eigen::RowVectorXd& top) const {
        const int depth = this->depth();
        std::vector<Eigen::MatrixXd> delta(static_cast<std::size_t>(depth));
        delta[static_cast<std::size_t>(depth - 1)] = top;
        for (int l = depth; l >= 2; --l) {
            const auto prev = static_cast<std::size_t>(l - 1);
            Eigen::MatrixXd back = weight(l).transpose() * delta[static_cast<std::size_t>(l - 1)];
            back.array() *= activation_derivative(activation(), cache.pre[prev], cache.post[prev]).array();
            delta[prev - 1] = std::move(back);
        }
        return delta;
    }

    /// Gradient of f(x) with respect to every parameter, in the flat layout.
    Eigen::VectorXd gradient(const Eigen::VectorXd& x) const {
        BatchCache cache;
        forward_batch(x, &cache);
        const auto delta = backprop_batch(cache, Eigen::RowVectorXd::Ones(1));
        Eigen::VectorXd g(parameter_count());
        std::int64_t pos = 0;
        for (int l = 1; l <= depth(); ++l) {
            const Eigen::VectorXd& d = delta[static_cast<std::size_t>(l - 1)];
            const Eigen::MatrixXd& a = cache.post[static_cast<std::size_t>(l - 1)];
            const auto rows = weight(l).rows(), cols = weight(l).cols();
            for (Eigen::Index i = 0; i < rows; ++i)
                g.segment(pos + i * cols, cols) = d(i) * a.col(0);
            pos += rows * cols;
            g.segment(pos, rows) = d;
            pos += rows;
        }
        return g;
    }

    bool operator==(const Mlp& o) const {
        if (widths_ != o.widths_ || !(hyper_ == o.hyper_) || seed_ != o.seed_) return false;
        for (std::size_t l = 0; l < weights_.size(); ++l)
            if (weights_[l] != o.weights_[l] || biases_[l] != o.biases_[l]) return false;
        return true;
    }

    // -- Checkpoints ----------------------------------------------------------
    //
    // Little-endian binary: "NTKLMLP1", u64 seed, u8 activation, f64 sigma_w^2,
    // f64 sigma_b^2, u64 layer count + 1, u64 widths..., u64 parameter count,
    // f64 parameters in the flat layout.

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
        out.write(kMagic, 8);
        put_u64(out, seed_);
        const auto act = static_cast<std::uint8_t>(activation());
        out.put(static_cast<char>(act));
        put_f64(out, hyper_.sigma_w_sq());
        put_f64(out, hyper_.sigma_b_sq());
        put_u64(out, widths_.size());
        for (int w : widths_) put_u64(out, static_cast<std::uint64_t>(w));
        const Eigen::VectorXd flat = parameters();
        put_u64(out, static_cast<std::uint64_t>(flat.size()));
        for (Eigen::Index i = 0; i < flat.size(); ++i) put_f64(out, flat(i));
        if (!out) throw std::runtime_error("failed writing " + path.string());
    }

    static Mlp load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open " + path.string());
        char magic[8];
        in.read(magic, 8);
        if (!in || std::memcmp(magic, kMagic, 8) != 0) throw FormatError("not an ntklab checkpoint: " + path.string());
        const std::uint64_t seed = get_u64(in);
        const int act = in.get();
        if (act < 0 || act > 2) throw FormatError("bad activation tag in checkpoint");
        const double sw = get_f64(in);
        const double sb = get_f64(in);
        const std::uint64_t n_widths = get_u64(in);
        if (n_widths < 2 || n_widths > 100000) throw FormatError("bad layer count in checkpoint");
        std::vector<int> widths(n_widths);
        for (auto& w : widths) {
            const std::uint64_t v = get_u64(in);
            if (v == 0 || v > (1u << 30)) throw FormatError("bad width in checkpoint");
            w = static_cast<int>(v);
        }
        Mlp net(widths, InitHyper(sw, sb, static_cast<Activation>(act)), seed, Uninitialized{});
        const std::uint64_t count = get_u64(in);
        if (count != static_cast<std::uint64_t>(net.parameter_count())) throw FormatError("parameter count mismatch in checkpoint");
        Eigen::VectorXd flat(static_cast<Eigen::Index>(count));
        for (Eigen::Index i = 0; i < flat.size(); ++i) flat(i) = get_f64(in);
        net.set_parameters(flat);
        return net;
    }

private:
    struct Uninitialized {};
    static constexpr char kMagic[9] = "NTKLMLP1";

    Mlp(std::vector<int> widths, const InitHyper& hyper, std::uint64_t seed, Uninitialized)
        : widths_(std::move(widths)), hyper_(hyper), seed_(seed) {
        validate_widths(widths_);
        for (std::size_t l = 1; l < widths_.size(); ++l) {
            weights_.emplace_back(RowMatrix::Zero(widths_[l], widths_[l - 1]));
            biases_.emplace_back(Eigen::VectorXd::Zero(widths_[l]));
        }
    }

    static void validate_widths(const std::vector<int>& widths) {
        if (widths.size() < 2) throw ShapeError("need at least an input and an output width");
        for (int w : widths)
            if (w <= 0) throw ShapeError("layer widths must be positive");
        if (widths.back() != 1) throw ShapeError("the read-out layer must have width 1");
    }

    static void put_u64(std::ostream& out, std::uint64_t v) {
        std::array<char, 8> b;
        for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xFF);
        out.write(b.data(), 8);
    }
    static void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }
    static std::uint64_t get_u64(std::istream& in) {
        std::array<unsigned char, 8> b;
        in.read(reinterpret_cast<char*>(b.data()), 8);
        if (!in) throw FormatError("truncated checkpoint");
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
        return v;
    }
    static double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

    std::vector<int> widths_;
    InitHyper hyper_;
    std::uint64_t seed_;
    std::vector<RowMatrix> weights_;
    std::vector<Eigen::VectorXd> biases_;
};

}  // namespace ntklab
