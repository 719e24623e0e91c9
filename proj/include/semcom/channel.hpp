#pragma once

// OFDMA downlink: one resource block per user, Shannon capacity, and the
// resulting token budget.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "semcom/error.hpp"
#include "semcom/rng.hpp"

namespace semcom {

struct ChannelConfig {
    double bandwidth_hz = 1e6;         // W, per resource block
    double power_w = 1.0;              // P
    double noise_w_per_hz = 1e-16;     // N0
    double bits_per_token = 88.0;      // 11-byte token
    double cost_per_token = 1.0;       // O

    void validate() const {
        if (!(bandwidth_hz > 0 && power_w > 0 && noise_w_per_hz > 0 && bits_per_token > 0 && cost_per_token > 0)) {
            throw ConfigError("channel: W, P, N0, bits_per_token and O must all be > 0");
        }
    }
};

struct UserLink {
    double distance_m = 100.0;
    double rayleigh = 1.0;          // fading draw gamma
    double interference_w = 0.0;
    double latency_s = 5.0;

    void validate() const {
        if (!(distance_m > 0)) throw ConfigError("user link: distance must be > 0");
        if (!(latency_s > 0)) throw ConfigError("user link: latency budget must be > 0");
        if (!(rayleigh >= 0)) throw ConfigError("user link: fading draw must be >= 0");
        if (!(interference_w >= 0)) throw ConfigError("user link: interference must be >= 0");
    }
};

// phi = gamma * d^-2
inline double channel_gain(const UserLink& link) {
    return link.rayleigh / (link.distance_m * link.distance_m);
}

// Bits per second.
inline double capacity(const ChannelConfig& cfg, const UserLink& link) {
    const double snr = cfg.power_w * channel_gain(link) /
                       (link.interference_w + cfg.bandwidth_hz * cfg.noise_w_per_hz);
    return cfg.bandwidth_hz * std::log2(1.0 + snr);
}

inline std::size_t token_budget(const ChannelConfig& cfg, double capacity_bps, double latency_s,
                                std::size_t info_size_tokens) {
    const double link_tokens = latency_s * capacity_bps / cfg.bits_per_token;
    const double bound = std::min(link_tokens, cfg.cost_per_token * static_cast<double>(info_size_tokens));
    const double tokens = std::floor(bound / cfg.cost_per_token);
    if (!(tokens > 0)) return 0;
    return std::min(static_cast<std::size_t>(tokens), info_size_tokens);
}

inline std::size_t token_budget(const ChannelConfig& cfg, const UserLink& link, std::size_t info_size_tokens) {
    return token_budget(cfg, capacity(cfg, link), link.latency_s, info_size_tokens);
}

// Unit-scale Rayleigh draws by inverse CDF.
inline std::vector<double> sample_rayleigh(std::uint64_t seed, std::size_t n) {
    Rng rng(seed, /*stream=*/0x5241594Cu);
    std::vector<double> out(n);
    for (auto& g : out) g = std::sqrt(-2.0 * std::log(rng.uniform_open0()));
    return out;
}

}  // namespace semcom
