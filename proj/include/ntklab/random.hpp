#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace ntklab {

/// Philox4x32-10 counter-based generator (Salmon et al., Random123).
/// Stateless: the output is a pure function of (counter, key).
struct Philox4x32 {
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static constexpr Counter generate(Counter ctr, Key key) noexcept {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += 0x9E3779B9u;
                key[1] += 0xBB67AE85u;
            }
            const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * ctr[0];
            const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * ctr[2];
            const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const auto lo0 = static_cast<std::uint32_t>(p0);
            const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const auto lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        }
        return ctr;
    }
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Mixes a base seed with a list of tags into an independent seed.
constexpr std::uint64_t derive_seed(std::uint64_t base,
                                    std::initializer_list<std::uint64_t> tags) noexcept {
    std::uint64_t h = splitmix64(base);
    for (auto t : tags) h = splitmix64(h ^ splitmix64(t + 0x632BE59BD9B4E019ull));
    return h;
}

namespace detail {

// (0, 1] so that log() is always finite.
constexpr double to_unit_open_closed(std::uint64_t bits) noexcept {
    return static_cast<double>((bits >> 11) + 1) * 0x1.0p-53;
}

constexpr double to_unit(std::uint64_t bits) noexcept {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

inline std::array<std::uint64_t, 2> philox_block(std::uint64_t seed, std::uint64_t stream,
                                                 std::uint64_t block) noexcept {
    const auto out = Philox4x32::generate(
        {static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32),
         static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)},
        {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)});
    return {(std::uint64_t{out[0]} << 32) | out[1], (std::uint64_t{out[2]} << 32) | out[3]};
}

}  // namespace detail

/// Standard normal keyed by (seed, stream, index). Two consecutive indices share
/// one Philox block through the cosine/sine halves of a Box-Muller transform.
inline double normal_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) noexcept {
    const auto words = detail::philox_block(seed, stream, index / 2);
    const double radius = std::sqrt(-2.0 * std::log(detail::to_unit_open_closed(words[0])));
    const double angle = 2.0 * std::numbers::pi * detail::to_unit(words[1]);
    return radius * ((index & 1u) ? std::sin(angle) : std::cos(angle));
}

/// Fills out[0..n) with normal_at(seed, stream, 0..n-1), one Philox block per pair.
inline void fill_normals(std::uint64_t seed, std::uint64_t stream, double scale, double* out, std::size_t n) noexcept {
    for (std::size_t k = 0; k < n; k += 2) {
        const auto words = detail::philox_block(seed, stream, k / 2);
        const double radius = std::sqrt(-2.0 * std::log(detail::to_unit_open_closed(words[0])));
        const double angle = 2.0 * std::numbers::pi * detail::to_unit(words[1]);
        out[k] = scale * (radius * std::cos(angle));
        if (k + 1 < n) out[k + 1] = scale * (radius * std::sin(angle));
    }
}

/// Sequential view over a Philox stream. Cheap to copy; two streams with
/// different (seed, stream) never overlap.
class RandomStream {
public:
    RandomStream(std::uint64_t seed, std::uint64_t stream) noexcept : seed_(seed), stream_(stream) {}

    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const auto words = detail::philox_block(seed_, stream_, counter_++);
        const double radius = std::sqrt(-2.0 * std::log(detail::to_unit_open_closed(words[0])));
        const double angle = 2.0 * std::numbers::pi * detail::to_unit(words[1]);
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    /// Uniform on [0, 1).
    double uniform() noexcept { return detail::to_unit(next_u64()); }

    std::uint64_t next_u64() noexcept {
        if (word_index_ == 2) {
            words_ = detail::philox_block(seed_, stream_ ^ 0x8000000000000000ull, raw_counter_++);
            word_index_ = 0;
        }
        return words_[word_index_++];
    }

    /// Uniform integer in [0, n) by rejection; n > 0.
    std::uint64_t below(std::uint64_t n) noexcept {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x;
        do x = next_u64();
        while (x >= limit);
        return x % n;
    }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
    std::uint64_t raw_counter_ = 0;
    std::array<std::uint64_t, 2> words_{};
    int word_index_ = 2;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace ntklab
