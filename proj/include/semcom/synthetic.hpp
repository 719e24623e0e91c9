#pragma once

// Seeded table environment with a known optimum, for training and testing the
// allocator without a corpus.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "semcom/add.hpp"
#include "semcom/metrics.hpp"

namespace semcom::add {

struct SyntheticItem {
    std::vector<std::uint8_t> bits;  // 16 x 16
    std::size_t info = 0;            // tokens
    std::vector<ScoreRow> table;     // breakpoints, tokens ascending
};

struct SyntheticConfig {
    std::size_t users = 1;
    std::size_t pool = 64;
    std::size_t min_cells = 32;
    std::size_t max_cells = 250;
    std::size_t tokens_per_cell = 16;
    std::size_t breakpoints = 16;  // segments per table
    double cap_lo = 0.6;           // cap = floor(info * U[cap_lo, 1])
    ProxyScorerConfig curve{};     // D = t_max (1-c)^2, Q = q_lb + (q_src - q_lb)(1 - (1-c)^2)
    JpsqParams jpsq{};
    std::uint64_t seed = 1;
};

class SyntheticTableEnv final : public AllocationEnv {
public:
    explicit SyntheticTableEnv(SyntheticConfig cfg) : cfg_(cfg) {
        if (cfg_.users == 0 || cfg_.pool == 0 || cfg_.breakpoints == 0) {
            throw ConfigError("synthetic env: users, pool and breakpoints must be >= 1");
        }
        if (cfg_.min_cells == 0 || cfg_.min_cells > cfg_.max_cells || cfg_.max_cells > kStateCells) {
            throw ConfigError("synthetic env: need 1 <= min_cells <= max_cells <= 256");
        }
        if (!(cfg_.cap_lo > 0 && cfg_.cap_lo <= 1)) throw ConfigError("synthetic env: cap_lo must lie in (0, 1]");
        cfg_.jpsq.validate();
        Rng rng(cfg_.seed, 0x5EED);
        for (std::size_t k = 0; k < cfg_.pool; ++k) items_.push_back(make_item(rng));
    }

    const SyntheticConfig& config() const { return cfg_; }
    const std::vector<SyntheticItem>& items() const { return items_; }
    std::size_t users() const override { return cfg_.users; }

    AllocState sample_state(Rng& rng) const override {
        AllocState s;
        for (std::size_t i = 0; i < cfg_.users; ++i) {
            const auto k = static_cast<std::size_t>(rng.below(items_.size()));
            const auto& it = items_[k];
            s.bits.insert(s.bits.end(), it.bits.begin(), it.bits.end());
            s.info_size.push_back(it.info);
            s.cap.push_back(static_cast<std::size_t>(std::floor(static_cast<double>(it.info) * rng.uniform(cfg_.cap_lo, 1.0))));
            s.items.push_back(k);
        }
        return s;
    }

    Score lookup(std::size_t item, double tokens) const {
        const auto& r = items_.at(item).table;
        if (tokens <= r.front().tokens) return {r.front().distance, r.front().quality};
        if (tokens >= r.back().tokens) return {r.back().distance, r.back().quality};
        const auto hi = std::upper_bound(r.begin(), r.end(), tokens,
                                         [](double t, const ScoreRow& row) { return t < row.tokens; });
        const auto lo = hi - 1;
        const double f = (tokens - lo->tokens) / (hi->tokens - lo->tokens);
        return {lo->distance + f * (hi->distance - lo->distance), lo->quality + f * (hi->quality - lo->quality)};
    }

    double user_utility(const AllocState& s, std::size_t user, std::size_t tokens) const override {
        if (tokens > s.cap[user]) return cfg_.jpsq.penalty;
        const auto sc = lookup(s.items[user], static_cast<double>(tokens));
        return semcom::user_utility(jpsq(sc.distance, sc.quality, cfg_.jpsq), sc.quality,
                                    static_cast<double>(tokens), cfg_.jpsq);
    }

    std::vector<std::size_t> breakpoints(const AllocState& s, std::size_t user) const override {
        std::vector<std::size_t> out;
        for (const auto& r : items_.at(s.items[user]).table) out.push_back(static_cast<std::size_t>(r.tokens));
        return out;
    }

    // The pool as a score table keyed "item0000", "item0001", ...
    ScoreTable to_table() const {
        ScoreTable t;
        for (std::size_t k = 0; k < items_.size(); ++k) {
            char id[32];
            std::snprintf(id, sizeof id, "item%04zu", k);
            for (const auto& r : items_[k].table) t.add(id, r);
        }
        return t;
    }

private:
    SyntheticItem make_item(Rng& rng) const {
        SyntheticItem it;
        const auto span = cfg_.max_cells - cfg_.min_cells + 1;
        const auto cells = cfg_.min_cells + static_cast<std::size_t>(rng.below(span));
        std::vector<std::size_t> idx(kStateCells);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t i = 0; i < cells; ++i) {
            std::swap(idx[i], idx[i + static_cast<std::size_t>(rng.below(kStateCells - i))]);
        }
        it.bits.assign(kStateCells, 0);
        for (std::size_t i = 0; i < cells; ++i) it.bits[idx[i]] = 1;
        it.info = cells * cfg_.tokens_per_cell;

        const auto& c = cfg_.curve;
        std::size_t prev = 0;
        for (std::size_t k = 0; k <= cfg_.breakpoints; ++k) {
            const auto t = static_cast<std::size_t>(std::llround(static_cast<double>(it.info * k) /
                                                                 static_cast<double>(cfg_.breakpoints)));
            if (k > 0 && t == prev) continue;
            prev = t;
            const double miss = 1.0 - static_cast<double>(t) / static_cast<double>(it.info);
            it.table.push_back({static_cast<double>(t), c.t_max * miss * miss,
                                c.q_lb + (c.q_src - c.q_lb) * (1.0 - miss * miss)});
        }
        return it;
    }

    SyntheticConfig cfg_;
    std::vector<SyntheticItem> items_;
};

}  // namespace semcom::add
