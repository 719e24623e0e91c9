#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace semcom {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Counter-based generator: output i of stream (seed, stream) is a pure function
// of (seed, stream, i), so streams can be split off without shared state and
// results are identical on every platform. The distributions below are
// implemented here rather than taken from <random>, whose distributions are
// implementation-defined.
class Rng {
    __extension__ using u128 = unsigned __int128;

public:
    explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0)
        : key_(splitmix64(seed) ^ splitmix64(stream * 0xD1B54A32D192ED03ull + 1)) {}

    std::uint64_t next_u64() { return splitmix64(key_ + 0x9E3779B97F4A7C15ull * counter_++); }

    // Independent child stream.
    Rng split(std::uint64_t stream) const { return Rng(key_, stream + 0x5851F42D4C957F2Dull); }

    // Uniform in (0, 1]; never returns 0 so log(u) is finite.
    double uniform_open0() { return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) return 0;
        // Lemire's multiply-shift with rejection.
        for (;;) {
            const auto x = next_u64();
            const auto m = static_cast<u128>(x) * n;
            const auto low = static_cast<std::uint64_t>(m);
            if (low >= n || low >= (-n) % n) return static_cast<std::uint64_t>(m >> 64);
        }
    }

    // Standard normal via Box-Muller (cached second variate).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_open0();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace semcom
