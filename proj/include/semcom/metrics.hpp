#pragma once

// Perceptual scoring: similarity/quality oracles, their fusion into JPSQ and
// the per-user utility that the allocator maximises.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "semcom/error.hpp"
#include "semcom/packing.hpp"

namespace semcom {

struct JpsqParams {
    double omega0 = 1.25;
    double q_th = 4.9827;
    double t_max = 0.5;
    double omega1 = 500.0;
    double omega2 = 0.05;
    double penalty = -500.0;  // reward for actions violating the per-user bound

    void validate() const {
        if (!(omega0 > 0 && q_th > 0 && t_max > 0 && omega1 > 0 && omega2 > 0)) {
            throw ConfigError("jpsq: omega0, q_th, t_max, omega1, omega2 must be > 0");
        }
        if (!(penalty < 0)) throw ConfigError("jpsq: penalty must be < 0");
    }
};

// Softmax output of the aesthetic classifier over scores 1..10.
struct QualityDistribution {
    std::array<double, 10> c{};

    void validate() const {
        double total = 0.0;
        for (double v : c) {
            if (!(v >= 0.0)) throw Error("quality distribution has a negative entry");
            total += v;
        }
        if (std::abs(total - 1.0) > 1e-9) throw Error("quality distribution does not sum to 1");
    }
};

struct Moments {
    double mean = 0.0;
    double stddev = 0.0;
};

inline Moments nima_moments(const QualityDistribution& dist) {
    dist.validate();
    Moments m;
    for (std::size_t i = 0; i < 10; ++i) m.mean += static_cast<double>(i + 1) * dist.c[i];
    double var = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
        const double d = static_cast<double>(i + 1) - m.mean;
        var += d * d * dist.c[i];
    }
    m.stddev = std::sqrt(std::max(var, 0.0));
    return m;
}

inline double cosine_distance(std::span<const double> f0, std::span<const double> f1) {
    if (f0.size() != f1.size()) throw Error("cosine_distance: feature sizes differ");
    double dot = 0.0;
    double n0 = 0.0;
    double n1 = 0.0;
    for (std::size_t i = 0; i < f0.size(); ++i) {
        dot += f0[i] * f1[i];
        n0 += f0[i] * f0[i];
        n1 += f1[i] * f1[i];
    }
    if (n0 == 0.0 || n1 == 0.0) throw Error("cosine_distance: zero feature vector");
    return std::clamp(1.0 - dot / (std::sqrt(n0) * std::sqrt(n1)), 0.0, 2.0);
}

// Maps a distance in [0, t_max] to a similarity in [1, 0]; clamps outside.
inline double normalize_similarity(double t, double t_max) {
    if (!(t_max > 0)) throw ConfigError("normalize_similarity: t_max must be > 0");
    return std::clamp((t_max - t) / t_max, 0.0, 1.0);
}

inline double jpsq(double distance, double quality, const JpsqParams& p) {
    if (!(quality > 0)) throw Error("jpsq: quality must be > 0");
    // ln(omega0 Q / Q_th) written against the break-even quality so that
    // Q = Q_th / omega0 gives exactly zero.
    return normalize_similarity(distance, p.t_max) * std::log(quality / (p.q_th / p.omega0));
}

// omega1 * J * [Q >= Q_th] - omega2 * b.
inline double user_utility(double jpsq_value, double quality, double tokens, const JpsqParams& p) {
    if (!(tokens >= 0)) return p.penalty;
    const double gate = quality >= p.q_th ? 1.0 : 0.0;
    return p.omega1 * jpsq_value * gate - p.omega2 * tokens;
}

// Same, returning the penalty when tokens exceed the per-user bound.
inline double user_utility(double jpsq_value, double quality, double tokens, double cap, const JpsqParams& p) {
    if (tokens > cap) return p.penalty;
    return user_utility(jpsq_value, quality, tokens, p);
}

// ---------------------------------------------------------------------------
// Scorer oracles

struct Score {
    double distance = 0.0;  // similarity distance D >= 0
    double quality = 1.0;   // aesthetic mean Q in [1, 10]
};

class ScorerOracle {
public:
    virtual ~ScorerOracle() = default;
    virtual Score score(std::string_view source_id, const TransmittedPrefix& prefix) const = 0;
};

struct ProxyScorerConfig {
    double t_max = 0.5;
    double q_src = 5.2651;
    double q_lb = 4.9827;
};

// Model-free stand-in: scores follow the importance-weighted coverage of the
// transmitted prefix.
class ProxyScorer final : public ScorerOracle {
public:
    explicit ProxyScorer(ProxyScorerConfig cfg = {}) : cfg_(cfg) {
        if (!(cfg_.t_max > 0)) throw ConfigError("proxy scorer: t_max must be > 0");
        if (!(cfg_.q_lb >= 1 && cfg_.q_src <= 10 && cfg_.q_lb <= cfg_.q_src)) {
            throw ConfigError("proxy scorer: need 1 <= q_lb <= q_src <= 10");
        }
    }

    static double weighted_coverage(const TransmittedPrefix& prefix) {
        double cov = 0.0;
        for (const auto& w : prefix.coverage) cov += w.importance * w.coverage;
        return std::clamp(cov, 0.0, 1.0);
    }

    Score score_coverage(double coverage) const {
        const double miss = 1.0 - coverage;
        return {cfg_.t_max * miss, cfg_.q_lb + (cfg_.q_src - cfg_.q_lb) * (1.0 - miss * miss)};
    }

    Score score(std::string_view, const TransmittedPrefix& prefix) const override {
        return score_coverage(weighted_coverage(prefix));
    }

    const ProxyScorerConfig& config() const { return cfg_; }

private:
    ProxyScorerConfig cfg_;
};

struct ScoreRow {
    double tokens = 0.0;
    double distance = 0.0;
    double quality = 0.0;
};

// (image_id, tokens) -> (D, Q) breakpoints.
class ScoreTable {
public:
    static constexpr std::string_view kHeader = "image_id,tokens,dreamsim,nima_mu";

    void add(const std::string& image_id, ScoreRow row) {
        auto& rows = rows_[image_id];
        if (!rows.empty() && !(row.tokens > rows.back().tokens)) {
            throw ConfigError("score table: tokens must be strictly increasing for image " + image_id);
        }
        rows.push_back(row);
    }

    bool contains(std::string_view image_id) const { return rows_.find(std::string(image_id)) != rows_.end(); }

    const std::vector<ScoreRow>& rows(std::string_view image_id) const {
        const auto it = rows_.find(std::string(image_id));
        if (it == rows_.end()) throw Error("score table: unknown image_id \"" + std::string(image_id) + "\"");
        return it->second;
    }

    std::vector<std::string> image_ids() const {
        std::vector<std::string> ids;
        for (const auto& [k, v] : rows_) ids.push_back(k);
        return ids;
    }

    // Piecewise-linear in tokens, constant beyond both ends.
    Score lookup(std::string_view image_id, double tokens) const {
        const auto& r = rows(image_id);
        if (tokens <= r.front().tokens) return {r.front().distance, r.front().quality};
        if (tokens >= r.back().tokens) return {r.back().distance, r.back().quality};
        const auto hi = std::upper_bound(r.begin(), r.end(), tokens,
                                         [](double t, const ScoreRow& row) { return t < row.tokens; });
        const auto lo = hi - 1;
        const double f = (tokens - lo->tokens) / (hi->tokens - lo->tokens);
        return {lo->distance + f * (hi->distance - lo->distance), lo->quality + f * (hi->quality - lo->quality)};
    }

    static ScoreTable parse_csv(std::istream& in, const std::string& name = "score table") {
        ScoreTable t;
        std::string line;
        if (!std::getline(in, line)) throw ConfigError(name + ": empty file");
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line != kHeader) throw ConfigError(name + ": header must be \"" + std::string(kHeader) + "\"");
        std::string prev_id;
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            std::array<std::string, 4> f;
            std::stringstream ss(line);
            std::size_t k = 0;
            for (; k < 4 && std::getline(ss, f[k], ','); ++k) {
            }
            std::string extra;
            if (k != 4 || std::getline(ss, extra, ',')) {
                throw ConfigError(name + ": line " + std::to_string(lineno) + " must have 4 fields");
            }
            ScoreRow row;
            try {
                std::size_t used = 0;
                row.tokens = std::stod(f[1], &used);
                if (used != f[1].size()) throw std::invalid_argument("tokens");
                row.distance = std::stod(f[2], &used);
                if (used != f[2].size()) throw std::invalid_argument("dreamsim");
                row.quality = std::stod(f[3], &used);
                if (used != f[3].size()) throw std::invalid_argument("nima_mu");
            } catch (const std::exception&) {
                throw ConfigError(name + ": line " + std::to_string(lineno) + " has a non-numeric field");
            }
            if (!(row.tokens >= 0 && row.distance >= 0 && std::isfinite(row.distance) && row.quality >= 1 &&
                  row.quality <= 10)) {
                throw ConfigError(name + ": line " + std::to_string(lineno) + " has an out-of-range value");
            }
            if (f[0] < prev_id) throw ConfigError(name + ": rows must be sorted by image_id (line " + std::to_string(lineno) + ")");
            prev_id = f[0];
            t.add(f[0], row);
        }
        if (t.rows_.empty()) throw ConfigError(name + ": no rows");
        return t;
    }

    static ScoreTable load_csv(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open score table " + path.string());
        return parse_csv(in, path.string());
    }

    void write_csv(std::ostream& os) const {
        os << kHeader << '\n';
        for (const auto& [id, rows] : rows_) {
            for (const auto& r : rows) {
                char buf[128];
                std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g\n", r.tokens, r.distance, r.quality);
                os << id << buf;
            }
        }
    }

private:
    std::map<std::string, std::vector<ScoreRow>> rows_;
};

// Reads (D, Q) off a precomputed table at the prefix's token count.
class TableScorer final : public ScorerOracle {
public:
    explicit TableScorer(ScoreTable table) : table_(std::move(table)) {}

    Score score(std::string_view source_id, const TransmittedPrefix& prefix) const override {
        return table_.lookup(source_id, static_cast<double>(prefix.tokens_used));
    }

    const ScoreTable& table() const { return table_; }

private:
    ScoreTable table_;
};

// Mean distance between each source and an empty transmission, over n items
// drawn cyclically from the corpus.
inline double calibrate_tmax(const ScorerOracle& scorer, std::span<const std::string> corpus, std::size_t n) {
    if (corpus.empty()) throw Error("calibrate_tmax: empty corpus");
    if (n == 0) throw Error("calibrate_tmax: n must be >= 1");
    const TransmittedPrefix empty{};
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += scorer.score(corpus[i % corpus.size()], empty).distance;
    return total / static_cast<double>(n);
}

}  // namespace semcom
