#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace dcvlm {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seeded generator with distribution code that does not depend on the
/// standard library's implementation-defined distributions, so streams are
/// identical across toolchains.
class Rng {
 public:
    explicit Rng(std::uint64_t seed = 0)
        : engine_(splitmix64(seed)), stream_key_(splitmix64(seed ^ 0x6a09e667f3bcc909ULL)) {}

    /// Child generator for an independent, reproducible sub-stream.
    Rng derive(std::uint64_t stream) const {
        return Rng(stream_key_ ^ splitmix64(stream + 0x51ed2701ULL));
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Rejection sampling keeps the draw unbiased.
        const std::uint64_t limit = n == 0 ? 0 : (~std::uint64_t {0} - n + 1) % n;
        std::uint64_t r = engine_();
        while (r < limit) r = engine_();
        return r % n;
    }

    template <typename It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const auto j = below(i);
            std::swap(first[i - 1], first[j]);
        }
    }

 private:
    std::mt19937_64 engine_;
    std::uint64_t stream_key_;
};

}  // namespace dcvlm
