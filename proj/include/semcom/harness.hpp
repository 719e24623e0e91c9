#pragma once

// Scenario files, the end-to-end extraction pipeline, and the experiment
// runners behind the command-line tool.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cerrno>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "semcom/add.hpp"
#include "semcom/bundle.hpp"
#include "semcom/channel.hpp"
#include "semcom/metrics.hpp"
#include "semcom/packing.hpp"
#include "semcom/prompt_analysis.hpp"
#include "semcom/segmentation.hpp"

namespace semcom {

inline constexpr const char* kArtifactVersion = "0.1.0";

// Binarization threshold per POS class.
struct XiScheme {
    std::map<Pos, double> by_pos{{Pos::PROPN, 0.9}, {Pos::NN, 0.8}};
    double fallback = 0.5;

    double xi(Pos p) const {
        const auto it = by_pos.find(p);
        return it == by_pos.end() ? fallback : it->second;
    }

    void validate() const {
        auto ok = [](double v) { return v >= 0.0 && v <= 1.0; };
        if (!ok(fallback)) throw ConfigError("xi_scheme: default must lie in [0, 1]");
        for (const auto& [p, v] : by_pos) {
            if (!ok(v)) throw ConfigError("xi_scheme: " + std::string(to_string(p)) + " must lie in [0, 1]");
        }
    }
};

// ---------------------------------------------------------------------------
// Pipeline

struct PipelineResult {
    std::vector<BinaryAttentionMap> maps;  // retained words, prompt order
    PromptAnalysis analysis;
    std::vector<CleanSegment> segments;    // retained words, prompt order
    SemanticInfo info;
};

inline PipelineResult run_pipeline(const SemComBundle& bundle, const XiScheme& xi, const DbscanParams& dbscan) {
    PipelineResult r;
    const auto filtered = filter_words(bundle.words);
    for (int w : filtered.retained) {
        r.maps.push_back(binary_map_for(bundle, w, xi.xi(bundle.words[static_cast<std::size_t>(w)].pos)));
    }
    r.analysis = analyze_prompt(bundle.words, r.maps);
    for (const auto& m : r.maps) r.segments.push_back(clean_segment(m, dbscan));
    r.info = pack(r.segments, r.analysis.importance);
    return r;
}

// ---------------------------------------------------------------------------
// Scenario

struct ScenarioUser {
    std::size_t bundle = 0;  // index into corpus
    UserLink link;
};

struct ScorerSpec {
    enum class Kind { proxy, table } kind = Kind::proxy;
    ProxyScorerConfig proxy;
    std::filesystem::path table_path;
};

struct ExperimentSpec {
    std::size_t states = 50;
    std::vector<std::string> policies = {"fixed", "random"};
    std::vector<std::size_t> robustness_grid;
    std::size_t sweep_from = 2;
    std::size_t sweep_to = 10;
};

struct Scenario {
    std::uint64_t seed = 0;
    std::vector<std::filesystem::path> corpus;
    std::vector<ScenarioUser> users;
    ChannelConfig channel;
    std::uint64_t channel_seed = 0;
    JpsqParams jpsq;
    XiScheme xi;
    DbscanParams dbscan;
    ScorerSpec scorer;
    add::AddHyper add;
    ExperimentSpec experiment;
    nlohmann::json source;  // parsed document, after the seed override

    void validate() const {
        if (corpus.empty()) throw ConfigError("scenario: corpus is empty");
        if (users.empty()) throw ConfigError("scenario: users is empty");
        for (std::size_t i = 0; i < users.size(); ++i) {
            if (users[i].bundle >= corpus.size()) {
                throw ConfigError("scenario: users[" + std::to_string(i) + "] references a bundle outside the corpus");
            }
            users[i].link.validate();
        }
        channel.validate();
        jpsq.validate();
        xi.validate();
        if (!(dbscan.eps > 0) || dbscan.min_points == 0) throw ConfigError("scenario: dbscan eps must be > 0 and min_points >= 1");
        add.validate();
        if (experiment.states == 0) throw ConfigError("scenario: experiment.states must be >= 1");
        if (experiment.sweep_from == 0 || experiment.sweep_from > experiment.sweep_to) {
            throw ConfigError("scenario: experiment sweep range must satisfy 1 <= from <= to");
        }
    }
};

namespace detail {

// Typed access to optional keys; unknown keys are rejected so typos surface.
class JsonReader {
public:
    JsonReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError("scenario: " + where_ + " must be an object");
    }

    template <typename T>
    T get(const char* key, T fallback) {
        seen_.insert(key);
        if (!j_.contains(key)) return fallback;
        return as<T>(key);
    }

    template <typename T>
    T require(const char* key) {
        seen_.insert(key);
        if (!j_.contains(key)) throw ConfigError("scenario: missing field " + where_ + "." + key);
        return as<T>(key);
    }

    bool has(const char* key) const { return j_.contains(key); }

    const nlohmann::json& child(const char* key) {
        seen_.insert(key);
        if (!j_.contains(key)) throw ConfigError("scenario: missing field " + where_ + "." + key);
        return j_.at(key);
    }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) throw ConfigError("scenario: unknown field " + where_ + "." + k);
        }
    }

private:
    template <typename T>
    T as(const char* key) const {
        const auto& v = j_.at(key);
        if constexpr (std::is_unsigned_v<T>) {
            if (!v.is_number_integer() || v.get<long long>() < 0) {
                throw ConfigError("scenario: field " + where_ + "." + key + " must be a non-negative integer");
            }
        }
        try {
            return v.get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("scenario: field " + where_ + "." + key + " has the wrong type");
        }
    }

    const nlohmann::json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace detail

// Relative paths resolve against `base`. `seed_override` replaces the
// document's seed (the SEMCOM_SEED environment variable in the CLI).
inline Scenario parse_scenario(const nlohmann::json& doc, const std::filesystem::path& base,
                               std::optional<std::uint64_t> seed_override = std::nullopt) {
    using detail::JsonReader;
    Scenario s;
    s.source = doc;
    if (seed_override) s.source["seed"] = *seed_override;
    JsonReader top(s.source, "scenario");
    s.seed = top.get<std::uint64_t>("seed", 0);

    const auto& corpus = top.child("corpus");
    if (!corpus.is_array()) throw ConfigError("scenario: corpus must be an array of bundle paths");
    std::map<std::string, std::size_t> by_name;
    for (const auto& c : corpus) {
        if (!c.is_string()) throw ConfigError("scenario: corpus entries must be strings");
        by_name[c.get<std::string>()] = s.corpus.size();
        s.corpus.push_back(base / c.get<std::string>());
    }

    const auto& users = top.child("users");
    if (!users.is_array()) throw ConfigError("scenario: users must be an array");
    for (std::size_t i = 0; i < users.size(); ++i) {
        JsonReader u(users[i], "users[" + std::to_string(i) + "]");
        ScenarioUser su;
        const auto name = u.require<std::string>("bundle");
        const auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw ConfigError("scenario: users[" + std::to_string(i) + "].bundle = \"" + name + "\" is not in the corpus");
        }
        su.bundle = it->second;
        su.link.distance_m = u.get("distance_m", su.link.distance_m);
        su.link.latency_s = u.get("latency_s", su.link.latency_s);
        su.link.interference_w = u.get("interference_w", su.link.interference_w);
        u.finish();
        s.users.push_back(su);
    }

    if (top.has("channel")) {
        JsonReader c(top.child("channel"), "channel");
        s.channel.bandwidth_hz = c.get("W_hz", s.channel.bandwidth_hz);
        s.channel.power_w = c.get("P_w", s.channel.power_w);
        s.channel.noise_w_per_hz = c.get("N0_w_per_hz", s.channel.noise_w_per_hz);
        s.channel.bits_per_token = c.get("bits_per_token", s.channel.bits_per_token);
        s.channel.cost_per_token = c.get("O", s.channel.cost_per_token);
        s.channel_seed = c.get<std::uint64_t>("seed", 0);
        c.finish();
    }
    if (top.has("jpsq")) {
        JsonReader c(top.child("jpsq"), "jpsq");
        s.jpsq.omega0 = c.get("omega0", s.jpsq.omega0);
        s.jpsq.q_th = c.get("q_th", s.jpsq.q_th);
        s.jpsq.t_max = c.get("t_max", s.jpsq.t_max);
        s.jpsq.omega1 = c.get("omega1", s.jpsq.omega1);
        s.jpsq.omega2 = c.get("omega2", s.jpsq.omega2);
        s.jpsq.penalty = c.get("penalty", s.jpsq.penalty);
        c.finish();
    }
    if (top.has("xi_scheme")) {
        const auto& x = top.child("xi_scheme");
        if (!x.is_object()) throw ConfigError("scenario: xi_scheme must be an object");
        for (const auto& [k, v] : x.items()) {
            if (!v.is_number()) throw ConfigError("scenario: xi_scheme." + k + " must be a number");
            if (k == "default") {
                s.xi.fallback = v.get<double>();
            } else if (const auto p = parse_pos(k)) {
                s.xi.by_pos[*p] = v.get<double>();
            } else {
                throw ConfigError("scenario: xi_scheme." + k + " is not a POS class");
            }
        }
    }
    if (top.has("dbscan")) {
        JsonReader c(top.child("dbscan"), "dbscan");
        s.dbscan.eps = c.get("eps", s.dbscan.eps);
        s.dbscan.min_points = c.get<std::size_t>("min_points", s.dbscan.min_points);
        s.dbscan.min_cluster_size = c.get<std::size_t>("min_cluster_size", s.dbscan.min_cluster_size);
        c.finish();
    }
    if (top.has("scorer")) {
        JsonReader c(top.child("scorer"), "scorer");
        const auto kind = c.get<std::string>("kind", "proxy");
        if (kind == "proxy") {
            s.scorer.kind = ScorerSpec::Kind::proxy;
            s.scorer.proxy.t_max = c.get("t_max", s.jpsq.t_max);
            s.scorer.proxy.q_src = c.get("q_src", s.scorer.proxy.q_src);
            s.scorer.proxy.q_lb = c.get("q_lb", s.scorer.proxy.q_lb);
        } else if (kind == "table") {
            s.scorer.kind = ScorerSpec::Kind::table;
            s.scorer.table_path = base / c.require<std::string>("path");
        } else {
            throw ConfigError("scenario: scorer.kind must be \"proxy\" or \"table\"");
        }
        c.finish();
    } else {
        s.scorer.proxy.t_max = s.jpsq.t_max;
    }
    if (top.has("add")) {
        JsonReader c(top.child("add"), "add");
        auto& h = s.add;
        h.steps = c.get<std::size_t>("T", h.steps);
        h.gamma = c.get("gamma", h.gamma);
        h.lr = c.get("lr", h.lr);
        h.batch_size = c.get<std::size_t>("batch_size", h.batch_size);
        h.episodes = c.get<std::size_t>("episodes", h.episodes);
        h.updates_per_episode = c.get<std::size_t>("updates_per_episode", h.updates_per_episode);
        h.hidden = c.get("hidden", h.hidden);
        h.time_dim = c.get<std::size_t>("time_dim", h.time_dim);
        h.beta_min = c.get("beta_min", h.beta_min);
        h.beta_max = c.get("beta_max", h.beta_max);
        h.explore_start = c.get("explore_start", h.explore_start);
        h.explore_end = c.get("explore_end", h.explore_end);
        h.sync_period = c.get<std::size_t>("sync_period", h.sync_period);
        h.buffer_capacity = c.get<std::size_t>("buffer_capacity", h.buffer_capacity);
        h.reward_scale = c.get("reward_scale", h.reward_scale);
        h.action_reg = c.get("action_reg", h.action_reg);
        h.grad_clip = c.get("grad_clip", h.grad_clip);
        h.token_scale = c.get("token_scale", h.token_scale);
        c.finish();
    }
    s.add.seed = s.seed;
    if (top.has("experiment")) {
        JsonReader c(top.child("experiment"), "experiment");
        auto& e = s.experiment;
        e.states = c.get<std::size_t>("states", e.states);
        e.policies = c.get("policies", e.policies);
        e.robustness_grid = c.get("robustness_grid", e.robustness_grid);
        e.sweep_from = c.get<std::size_t>("sweep_from", e.sweep_from);
        e.sweep_to = c.get<std::size_t>("sweep_to", e.sweep_to);
        c.finish();
    }
    top.finish();
    s.validate();
    return s;
}

inline std::optional<std::uint64_t> seed_from_env() {
    const char* v = std::getenv("SEMCOM_SEED");
    if (v == nullptr || *v == '\0') return std::nullopt;
    char* end = nullptr;
    errno = 0;
    const auto seed = std::strtoull(v, &end, 10);
    if (errno != 0 || *end != '\0' || *v == '-') throw ConfigError("SEMCOM_SEED must be a non-negative integer");
    return seed;
}

inline Scenario load_scenario(const std::filesystem::path& path,
                              std::optional<std::uint64_t> seed_override = std::nullopt) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scenario " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("scenario: malformed JSON in " + path.string() + ": " + e.what());
    }
    return parse_scenario(doc, path.parent_path(), seed_override);
}

// FNV-1a over the canonical (key-sorted, compact) dump of the document.
inline std::string config_hash(const Scenario& s) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(detail::fnv1a(s.source.dump())));
    return buf;
}

// ---------------------------------------------------------------------------
// Scenario environment

class ScenarioEnv final : public add::AllocationEnv {
public:
    struct Item {
        SemComBundle bundle;
        PipelineResult pipeline;
        std::vector<std::uint8_t> state_bits;
        std::string source_id;
    };

    // `users` lists scenario user indices, cycled when larger than the
    // scenario (used by the user-count sweep).
    ScenarioEnv(const Scenario& sc, std::vector<std::size_t> users) : sc_(sc), users_(std::move(users)) {
        if (users_.empty()) throw ConfigError("environment needs at least one user");
        for (auto u : users_) {
            if (u >= sc_.users.size()) throw Error("environment: user index out of range");
        }
        if (sc_.scorer.kind == ScorerSpec::Kind::table) {
            auto table = ScoreTable::load_csv(sc_.scorer.table_path);
            table_ = table;
            scorer_ = std::make_unique<TableScorer>(std::move(table));
        } else {
            scorer_ = std::make_unique<ProxyScorer>(sc_.scorer.proxy);
        }
        for (const auto& path : sc_.corpus) {
            Item it;
            it.bundle = load_bundle(path);
            it.pipeline = run_pipeline(it.bundle, sc_.xi, sc_.dbscan);
            const auto stream = it.pipeline.info.stream();
            it.state_bits = add::pool_to_state(add::pixels_to_mask(stream, it.bundle.image_width, it.bundle.image_height));
            it.source_id = it.bundle.source_image_id.value_or(path.filename().string());
            if (table_ && !table_->contains(it.source_id)) {
                throw ConfigError("score table has no rows for image_id \"" + it.source_id + "\"");
            }
            items_.push_back(std::move(it));
        }
    }

    explicit ScenarioEnv(const Scenario& sc) : ScenarioEnv(sc, all_users(sc)) {}

    std::size_t users() const override { return users_.size(); }
    const Scenario& scenario() const { return sc_; }
    const std::vector<Item>& items() const { return items_; }
    const Item& item_of(std::size_t user) const { return items_[sc_.users[users_[user]].bundle]; }
    const UserLink& link_of(std::size_t user) const { return sc_.users[users_[user]].link; }

    // Independent fading per user per state; the same stream for every policy.
    Rng state_rng() const { return Rng(sc_.seed, 0xC4A7000000000000ull ^ sc_.channel_seed); }

    add::AllocState sample_state(Rng& rng) const override {
        add::AllocState s;
        for (std::size_t i = 0; i < users_.size(); ++i) {
            const auto& it = item_of(i);
            UserLink link = link_of(i);
            link.rayleigh = std::sqrt(-2.0 * std::log(rng.uniform_open0()));
            s.bits.insert(s.bits.end(), it.state_bits.begin(), it.state_bits.end());
            s.info_size.push_back(it.pipeline.info.total_tokens);
            s.cap.push_back(token_budget(sc_.channel, link, it.pipeline.info.total_tokens));
            s.items.push_back(sc_.users[users_[i]].bundle);
        }
        return s;
    }

    Score score(std::size_t item, std::size_t tokens) const {
        const auto key = (static_cast<std::uint64_t>(item) << 40) | tokens;
        if (const auto it = cache_.find(key); it != cache_.end()) return it->second;
        const auto& x = items_[item];
        const auto sc = scorer_->score(x.source_id, truncate(x.pipeline.info, tokens));
        cache_.emplace(key, sc);
        return sc;
    }

    double user_utility(const add::AllocState& s, std::size_t user, std::size_t tokens) const override {
        if (tokens > s.cap[user]) return sc_.jpsq.penalty;
        const auto sc = score(s.items[user], tokens);
        return semcom::user_utility(jpsq(sc.distance, sc.quality, sc_.jpsq), sc.quality, static_cast<double>(tokens),
                                    sc_.jpsq);
    }

    std::vector<std::size_t> breakpoints(const add::AllocState& s, std::size_t user) const override {
        if (!table_) return {};
        std::vector<std::size_t> out;
        for (const auto& r : table_->rows(items_[s.items[user]].source_id)) out.push_back(static_cast<std::size_t>(r.tokens));
        return out;
    }

private:
    static std::vector<std::size_t> all_users(const Scenario& sc) {
        std::vector<std::size_t> u(sc.users.size());
        std::iota(u.begin(), u.end(), std::size_t{0});
        return u;
    }

    const Scenario& sc_;
    std::vector<std::size_t> users_;
    std::unique_ptr<ScorerOracle> scorer_;
    std::optional<ScoreTable> table_;
    std::vector<Item> items_;
    mutable std::unordered_map<std::uint64_t, Score> cache_;
};

// ---------------------------------------------------------------------------
// Reports

inline std::string fmt_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

struct UserRow {
    std::size_t user = 0;
    std::string bundle;
    std::size_t info_tokens = 0;
    std::size_t cap = 0;
    std::size_t tokens_sent = 0;
    double reduction_ratio = 0.0;
    double distance = 0.0;
    double quality = 0.0;
    double q_full = 0.0;
    double jpsq = 0.0;
    double utility = 0.0;
};

struct ExperimentReport {
    std::vector<UserRow> rows;
    double mean_reduction = 0.0;
    double mean_q_drop = 0.0;
    double total_utility = 0.0;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::string version = kArtifactVersion;

    void recompute() {
        mean_reduction = mean_q_drop = total_utility = 0.0;
        for (const auto& r : rows) {
            mean_reduction += r.reduction_ratio;
            mean_q_drop += r.q_full - r.quality;
            total_utility += r.utility;
        }
        if (!rows.empty()) {
            mean_reduction /= static_cast<double>(rows.size());
            mean_q_drop /= static_cast<double>(rows.size());
        }
    }

    void write_users_csv(std::ostream& os) const {
        os << "user,bundle,info_tokens,cap,tokens_sent,reduction_ratio,dreamsim,nima_mu,q_full,jpsq,utility\n";
        for (const auto& r : rows) {
            os << r.user << ',' << r.bundle << ',' << r.info_tokens << ',' << r.cap << ',' << r.tokens_sent << ','
               << fmt_num(r.reduction_ratio) << ',' << fmt_num(r.distance) << ',' << fmt_num(r.quality) << ','
               << fmt_num(r.q_full) << ',' << fmt_num(r.jpsq) << ',' << fmt_num(r.utility) << '\n';
        }
    }

    void write_summary_csv(std::ostream& os) const {
        os << "users,mean_reduction,mean_q_drop,total_utility,seed,config_hash,version\n";
        os << rows.size() << ',' << fmt_num(mean_reduction) << ',' << fmt_num(mean_q_drop) << ','
           << fmt_num(total_utility) << ',' << seed << ',' << config_hash << ',' << version << '\n';
    }
};

// One fading draw, every user sends its whole budget.
inline ExperimentReport run_simulation(const Scenario& sc, const ScenarioEnv& env) {
    auto rng = env.state_rng();
    const auto state = env.sample_state(rng);
    ExperimentReport rep;
    rep.seed = sc.seed;
    rep.config_hash = config_hash(sc);
    for (std::size_t i = 0; i < env.users(); ++i) {
        const auto& it = env.item_of(i);
        UserRow r;
        r.user = i;
        r.bundle = sc.corpus[state.items[i]].filename().string();
        r.info_tokens = state.info_size[i];
        r.cap = state.cap[i];
        r.tokens_sent = state.cap[i];
        r.reduction_ratio = reduction_ratio(r.tokens_sent, it.bundle.image_width, it.bundle.image_height);
        const auto sc_now = env.score(state.items[i], r.tokens_sent);
        r.distance = sc_now.distance;
        r.quality = sc_now.quality;
        r.q_full = env.score(state.items[i], r.info_tokens).quality;
        r.jpsq = jpsq(r.distance, r.quality, sc.jpsq);
        r.utility = env.user_utility(state, i, r.tokens_sent);
        rep.rows.push_back(std::move(r));
    }
    rep.recompute();
    return rep;
}

struct RobustnessPoint {
    std::string bundle;
    std::size_t tokens = 0;
    double distance = 0.0;
    double quality = 0.0;
};

// Quality against the token budget for every corpus bundle.
inline std::vector<RobustnessPoint> run_robustness_sweep(const Scenario& sc, const ScenarioEnv& env,
                                                         std::span<const std::size_t> grid) {
    std::vector<RobustnessPoint> out;
    for (std::size_t k = 0; k < env.items().size(); ++k) {
        for (auto t : grid) {
            const auto s = env.score(k, t);
            out.push_back({sc.corpus[k].filename().string(), t, s.distance, s.quality});
        }
    }
    return out;
}

inline void write_robustness_csv(std::ostream& os, std::span<const RobustnessPoint> pts) {
    os << "bundle,tokens,dreamsim,nima_mu\n";
    for (const auto& p : pts) os << p.bundle << ',' << p.tokens << ',' << fmt_num(p.distance) << ',' << fmt_num(p.quality) << '\n';
}

// ---------------------------------------------------------------------------
// Allocation experiments

struct Policy {
    std::string name;
    std::function<add::AllocAction(const add::AllocState&)> act;
};

inline Policy baseline_policy(const std::string& name, const add::AllocationEnv& env, std::uint64_t seed) {
    if (name == "fixed") {
        return {name, [](const add::AllocState& s) {
                    Rng unused(0);
                    return add::baseline_allocate(add::Baseline::fixed, s, unused);
                }};
    }
    if (name == "random") {
        auto rng = std::make_shared<Rng>(seed, 0xBA5E);
        return {name, [rng](const add::AllocState& s) { return add::baseline_allocate(add::Baseline::random, s, *rng); }};
    }
    if (name == "greedy") {
        return {name, [&env](const add::AllocState& s) {
                    Rng unused(0);
                    return add::baseline_allocate(add::Baseline::greedy_table, s, unused, &env);
                }};
    }
    throw ConfigError("unknown policy \"" + name + "\" (expected fixed, random, greedy or a checkpoint path)");
}

inline Policy add_policy(std::shared_ptr<const add::AddAgent> agent, std::string name = "add") {
    return {std::move(name), [agent](const add::AllocState& s) { return add::allocate(*agent, s); }};
}

struct AllocationRow {
    std::string policy;
    std::size_t state = 0;
    std::size_t user = 0;
    std::size_t cap = 0;
    double tokens = 0.0;
    double utility = 0.0;
};

struct AllocationReport {
    std::vector<AllocationRow> rows;
    std::vector<std::pair<std::string, double>> totals;  // per policy, summed over states

    void write_rows_csv(std::ostream& os) const {
        os << "policy,state,user,cap,tokens,utility\n";
        for (const auto& r : rows) {
            os << r.policy << ',' << r.state << ',' << r.user << ',' << r.cap << ',' << fmt_num(r.tokens) << ','
               << fmt_num(r.utility) << '\n';
        }
    }

    void write_totals_csv(std::ostream& os, std::size_t states) const {
        os << "policy,states,total_utility,mean_utility\n";
        for (const auto& [p, t] : totals) {
            os << p << ',' << states << ',' << fmt_num(t) << ',' << fmt_num(t / static_cast<double>(states)) << '\n';
        }
    }
};

// Every policy sees the same sequence of states.
inline AllocationReport run_allocation_experiment(const add::AllocationEnv& env, std::span<const Policy> policies,
                                                  std::size_t states, Rng state_rng) {
    std::vector<add::AllocState> drawn;
    for (std::size_t k = 0; k < states; ++k) drawn.push_back(env.sample_state(state_rng));
    AllocationReport rep;
    for (const auto& p : policies) {
        double total = 0.0;
        for (std::size_t k = 0; k < drawn.size(); ++k) {
            const auto a = p.act(drawn[k]);
            for (std::size_t i = 0; i < env.users(); ++i) {
                const double u = env.user_utility(drawn[k], i, static_cast<std::size_t>(std::floor(a.tokens[i])));
                rep.rows.push_back({p.name, k, i, drawn[k].cap[i], a.tokens[i], u});
            }
            total += env.utility(drawn[k], a.tokens);
        }
        rep.totals.emplace_back(p.name, total);
    }
    return rep;
}

struct SweepRow {
    std::size_t users = 0;
    std::string policy;
    double mean_utility = 0.0;
};

// Total utility per state against the number of users; user k takes scenario
// user k mod |users|.
inline std::vector<SweepRow> run_user_sweep(const Scenario& sc, std::span<const std::string> policies,
                                            std::size_t from, std::size_t to, std::size_t states) {
    std::vector<SweepRow> out;
    for (std::size_t n = from; n <= to; ++n) {
        std::vector<std::size_t> users(n);
        for (std::size_t k = 0; k < n; ++k) users[k] = k % sc.users.size();
        const ScenarioEnv env(sc, users);
        std::vector<Policy> ps;
        for (const auto& name : policies) ps.push_back(baseline_policy(name, env, sc.seed + n));
        const auto rep = run_allocation_experiment(env, ps, states, env.state_rng());
        for (const auto& [p, t] : rep.totals) out.push_back({n, p, t / static_cast<double>(states)});
    }
    return out;
}

inline void write_sweep_csv(std::ostream& os, std::span<const SweepRow> rows) {
    os << "users,policy,mean_utility\n";
    for (const auto& r : rows) os << r.users << ',' << r.policy << ',' << fmt_num(r.mean_utility) << '\n';
}

inline void write_trace_csv(std::ostream& os, std::span<const double> rewards) {
    os << "episode,reward\n";
    for (std::size_t e = 0; e < rewards.size(); ++e) os << e << ',' << fmt_num(rewards[e]) << '\n';
}

// ---------------------------------------------------------------------------
// Plain CSV reading for the report command

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return i;
        }
        throw ConfigError("csv: no column \"" + std::string(name) + "\"");
    }

    bool has(std::string_view name) const { return std::find(header.begin(), header.end(), name) != header.end(); }
};

inline CsvTable read_csv(std::istream& in) {
    CsvTable t;
    std::string line;
    auto split = [](const std::string& l) {
        std::vector<std::string> f;
        std::stringstream ss(l);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (!l.empty() && l.back() == ',') f.emplace_back();
        return f;
    };
    if (!std::getline(in, line)) throw ConfigError("csv: empty input");
    t.header = split(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split(line);
        if (f.size() != t.header.size()) throw ConfigError("csv: row with " + std::to_string(f.size()) + " fields, header has " + std::to_string(t.header.size()));
        t.rows.push_back(std::move(f));
    }
    return t;
}

// Line plot of y against x, one series per distinct value of `series` (or a
// single series when empty).
inline void write_svg_plot(std::ostream& os, const CsvTable& t, const std::string& x, const std::string& y,
                           const std::string& series, const std::string& title) {
    const auto xi = t.column(x);
    const auto yi = t.column(y);
    std::map<std::string, std::vector<std::pair<double, double>>> data;
    for (const auto& r : t.rows) {
        const std::string key = series.empty() ? y : r[t.column(series)];
        data[key].emplace_back(std::stod(r[xi]), std::stod(r[yi]));
    }
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& [k, pts] : data) {
        for (const auto& [a, b] : pts) {
            x0 = std::min(x0, a), x1 = std::max(x1, a), y0 = std::min(y0, b), y1 = std::max(y1, b);
        }
    }
    if (data.empty()) x0 = y0 = 0, x1 = y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    const double W = 640, H = 400, L = 60, R = 140, T = 30, B = 40;
    auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };
    static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << x << "</text>\n";
    os << "<text x=\"" << L - 4 << "\" y=\"" << T + 4 << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << fmt_num(y1) << "</text>\n";
    os << "<text x=\"" << L - 4 << "\" y=\"" << H - B << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << fmt_num(y0) << "</text>\n";
    std::size_t c = 0;
    for (const auto& [k, pts] : data) {
        const char* color = kColors[c % std::size(kColors)];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
        for (const auto& [a, b] : pts) os << fmt_num(px(a)) << ',' << fmt_num(py(b)) << ' ';
        os << "\"/>\n";
        os << "<text x=\"" << W - R + 8 << "\" y=\"" << T + 16 * (c + 1) << "\" fill=\"" << color
           << "\" font-family=\"sans-serif\" font-size=\"12\">" << k << "</text>\n";
        ++c;
    }
    os << "</svg>\n";
}

}  // namespace semcom
