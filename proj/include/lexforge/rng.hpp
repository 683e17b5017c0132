#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string_view>
#include <vector>

#include "lexforge/error.hpp"

namespace lexforge {

// SplitMix64, Steele/Lea/Flood (2014). One 64-bit word of state, passes
// BigCrush, and is trivially seedable -- which is what matters here: every
// random choice in the pipeline is drawn from a stream derived by hashing
// (master seed, label, indices), so results are identical across platforms
// and independent of execution order.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
};

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// A deterministic random stream. Streams for different pipeline stages are
// derived from one master seed plus a stage label and optional indices
// (epoch, example id, ...), never by sharing generator state.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : gen_(seed) {}

    static RngStream derive(std::uint64_t master, std::string_view label,
                            std::initializer_list<std::uint64_t> indices = {}) {
        std::uint64_t h = SplitMix64::mix(master ^ fnv1a64(label));
        for (std::uint64_t idx : indices) {
            h = SplitMix64::mix(h ^ idx);
        }
        return RngStream(h);
    }

    std::uint64_t next_u64() { return gen_.next(); }

    // Uniform double in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(gen_.next() >> 11) * 0x1.0p-53;
    }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t next_below(std::uint64_t n) {
        check(n > 0, "RngStream::next_below: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = gen_.next();
        } while (x >= limit);
        return x % n;
    }

    bool next_bool() { return (gen_.next() & 1u) != 0; }

    // Standard normal via Box-Muller; the spare value is cached.
    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = next_double();
        } while (u1 <= 0.0);
        u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // Normal(0, std) clipped to +/-2 std by rejection.
    double next_truncated_normal(double stddev) {
        double z;
        do {
            z = next_gaussian();
        } while (z < -2.0 || z > 2.0);
        return z * stddev;
    }

    template <class T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    SplitMix64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace lexforge
