#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace swcl {

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t h = 14695981039346656037ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

/// Deterministic splitmix64 stream. Streams derived from (seed, key) pairs
/// are independent in practice, which makes per-image / per-epoch work
/// order-independent: every consumer owns its own stream.
///
/// All draws are implemented from first principles on top of next_u64() so
/// the byte-exact sequence does not depend on the standard library.
class RngStream {
public:
    RngStream() : state_(0x9e3779b97f4a7c15ULL) {}
    explicit RngStream(std::uint64_t seed) : state_(mix(seed)) {}
    RngStream(std::uint64_t seed, std::string_view key)
        : state_(mix(seed ^ fnv1a64(key))) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0,1) with 53 bits of precision.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; draws two uniforms per call.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    /// Uniform index in [0,n). n must be > 0.
    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static std::uint64_t mix(std::uint64_t x) {
        x ^= x >> 33;
        x *= 0xff51afd7ed558ccdULL;
        x ^= x >> 33;
        return x;
    }

    std::uint64_t state_;
};

inline RngStream derive_stream(std::uint64_t seed, std::string_view key) {
    return RngStream(seed, key);
}

}  // namespace swcl
