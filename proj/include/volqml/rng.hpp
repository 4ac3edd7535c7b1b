#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace volqml {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

}  // namespace detail

/**
 * Counter-based random stream keyed by (seed, stream id).
 *
 * The i-th 64-bit output is a pure function of (seed, stream id, i), so a
 * stream can be replayed bit-exactly and distinct stream ids can be handed
 * to concurrent workers without coordination. Normal and gamma variates are
 * produced by fixed algorithms (Box-Muller, Marsaglia-Tsang) rather than the
 * implementation-defined <random> distributions, which keeps outputs identical
 * across standard libraries.
 */
class RngStream {
public:
    RngStream() : RngStream(0, 0) {}
    RngStream(std::uint64_t seed, std::uint64_t stream_id)
        : seed_(seed), stream_id_(stream_id),
          key_(detail::splitmix64(seed ^ detail::splitmix64(stream_id ^ 0x5851F42D4C957F2DULL))) {}

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] std::uint64_t stream_id() const noexcept { return stream_id_; }
    [[nodiscard]] std::uint64_t counter() const noexcept { return counter_; }

    /// Independent child stream; children of distinct parents or indices do not overlap.
    [[nodiscard]] RngStream split(std::uint64_t index) const {
        return RngStream(seed_, detail::splitmix64(stream_id_ * 0x9E3779B97F4A7C15ULL + index + 1));
    }

    std::uint64_t next_u64() noexcept {
        const std::uint64_t c = counter_++;
        return detail::splitmix64(key_ + detail::splitmix64(c));
    }

    /// Uniform on the open interval (0, 1).
    double uniform() noexcept {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    /// Gamma(shape, 1) via Marsaglia-Tsang.
    double gamma(double shape) noexcept {
        if (shape < 1.0) {
            const double u = uniform();
            return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = 0.0;
            double v = 0.0;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    friend bool operator==(const RngStream&, const RngStream&) = default;

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace volqml
