#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "semcom/demo.hpp"
#include "semcom/harness.hpp"

using namespace semcom;
namespace fs = std::filesystem;

namespace {

const fs::path& demo_dir() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "semcom_test_demo";
        fs::remove_all(d);
        demo::write_demo(d);
        return d;
    }();
    return dir;
}

nlohmann::json demo_json(const std::string& file = "scenario.json") {
    std::ifstream in(demo_dir() / file);
    return nlohmann::json::parse(in);
}

Scenario parse(const nlohmann::json& j) { return parse_scenario(j, demo_dir()); }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace

TEST(Pipeline, SharedMaskIsSentOnce) {
    SemComBundle b;
    b.prompt = "red big box";
    b.image_width = b.image_height = 16;
    Grid<float> g(16, 16, 0.0f);
    for (std::size_t y = 2; y < 10; ++y) {
        for (std::size_t x = 3; x < 11; ++x) g(x, y) = 1.0f;
    }
    const Pos pos[] = {Pos::ADJ, Pos::ADJ, Pos::NN};
    for (int i = 0; i < 3; ++i) {
        b.words.push_back({i, "w", pos[i], i == 2 ? -1 : 2, "d"});
        b.maps.emplace_back(AttentionMap{i, g});
    }
    const auto r = run_pipeline(b, {}, {});
    EXPECT_EQ(r.info.total_tokens, 64u);
}

TEST(Pipeline, TokenCountMatchesSetAlgebraOracle) {
    const auto b = demo::blue_car();
    const XiScheme xi;
    const DbscanParams db;
    const auto r = run_pipeline(b, xi, db);
    std::set<Pixel> all;
    for (int w : filter_words(b.words).retained) {
        const auto m = binarize(std::get<AttentionMap>(b.map_for(w)), xi.xi(b.words[static_cast<std::size_t>(w)].pos));
        const auto seg = clean_segment(m, db);
        all.insert(seg.pixels.begin(), seg.pixels.end());
    }
    EXPECT_EQ(r.info.total_tokens, all.size());
    EXPECT_GT(r.info.total_tokens, 0u);
}

TEST(Scenario, DemoParsesWithDefaults) {
    const auto sc = parse(demo_json());
    EXPECT_EQ(sc.seed, 7u);
    EXPECT_EQ(sc.users.size(), 3u);
    EXPECT_EQ(sc.add.seed, 7u);
    EXPECT_DOUBLE_EQ(sc.xi.xi(Pos::PROPN), 0.9);
    EXPECT_DOUBLE_EQ(sc.xi.xi(Pos::VERB), 0.5);
    EXPECT_DOUBLE_EQ(sc.channel.bandwidth_hz, 1e5);
}

TEST(Scenario, ConfigErrors) {
    auto j = demo_json();
    j["bogus"] = 1;
    EXPECT_THROW(parse(j), ConfigError);
    j = demo_json();
    j["users"][0]["bundle"] = "bundles/nowhere";
    EXPECT_THROW(parse(j), ConfigError);
    j = demo_json();
    j["xi_scheme"]["NN"] = 1.5;
    EXPECT_THROW(parse(j), ConfigError);
    j = demo_json();
    j["channel"]["W_hz"] = -1;
    EXPECT_THROW(parse(j), ConfigError);
    j = demo_json();
    j["add"]["gamma"] = "high";
    EXPECT_THROW(parse(j), ConfigError);
    EXPECT_THROW(load_scenario(demo_dir() / "absent.json"), ConfigError);
}

TEST(Scenario, SeedOverrideAndHash) {
    const auto j = demo_json();
    const auto base = parse(j);
    const auto over = parse_scenario(j, demo_dir(), 99);
    EXPECT_EQ(over.seed, 99u);
    EXPECT_NE(config_hash(base), config_hash(over));
    EXPECT_EQ(config_hash(base), config_hash(parse(j)));

    for (const char* path : {"/jpsq/omega1", "/channel/P_w", "/dbscan/eps", "/add/lr"}) {
        auto k = j;
        const nlohmann::json::json_pointer p(path);
        k[p] = k[p].get<double>() * 1.5;
        EXPECT_NE(config_hash(parse(k)), config_hash(base)) << path;
    }

    setenv("SEMCOM_SEED", "123", 1);
    EXPECT_EQ(seed_from_env(), 123u);
    setenv("SEMCOM_SEED", "12x", 1);
    EXPECT_THROW(seed_from_env(), ConfigError);
    unsetenv("SEMCOM_SEED");
    EXPECT_FALSE(seed_from_env().has_value());
}

TEST(Simulation, AggregatesRecomputeFromRows) {
    const auto sc = parse(demo_json());
    const ScenarioEnv env(sc);
    auto rep = run_simulation(sc, env);
    ASSERT_EQ(rep.rows.size(), 3u);
    const auto copy = rep;
    rep.recompute();
    EXPECT_EQ(rep.total_utility, copy.total_utility);
    EXPECT_EQ(rep.mean_reduction, copy.mean_reduction);
    double total = 0.0;
    for (const auto& r : rep.rows) {
        total += r.utility;
        EXPECT_LE(r.tokens_sent, r.info_tokens);
    }
    EXPECT_EQ(total, rep.total_utility);
    std::ostringstream a, b;
    rep.write_users_csv(a);
    run_simulation(sc, ScenarioEnv(sc)).write_users_csv(b);
    EXPECT_EQ(a.str(), b.str());
}

TEST(Robustness, ProxyCurveIsMonotoneWithFixedEnds) {
    const auto sc = parse(demo_json());
    const ScenarioEnv env(sc);
    std::vector<std::size_t> grid;
    for (std::size_t t = 0; t <= 3000; t += 100) grid.push_back(t);
    const auto pts = run_robustness_sweep(sc, env, grid);
    for (std::size_t k = 0; k < env.items().size(); ++k) {
        const auto full = env.items()[k].pipeline.info.total_tokens;
        EXPECT_DOUBLE_EQ(env.score(k, 0).quality, sc.scorer.proxy.q_lb);
        EXPECT_DOUBLE_EQ(env.score(k, full).quality, sc.scorer.proxy.q_src);
    }
    for (std::size_t i = 1; i < pts.size(); ++i) {
        if (pts[i].bundle == pts[i - 1].bundle) {
            EXPECT_GE(pts[i].quality, pts[i - 1].quality);
        }
    }
}

TEST(Allocation, SingleUserMatchesDirectEvaluation) {
    auto j = demo_json("scenario_table.json");
    j["users"] = nlohmann::json::array({j["users"][0]});
    const auto sc = parse(j);
    const ScenarioEnv env(sc);
    const std::vector<Policy> ps{baseline_policy("fixed", env, 1), baseline_policy("greedy", env, 1)};
    const auto rep = run_allocation_experiment(env, ps, 5, env.state_rng());
    ASSERT_EQ(rep.rows.size(), 10u);
    double fixed_total = 0.0;
    for (const auto& row : rep.rows) {
        const auto tokens = std::floor(row.tokens);
        const auto score = env.score(0, static_cast<std::size_t>(tokens));
        const double direct = user_utility(jpsq(score.distance, score.quality, sc.jpsq), score.quality, tokens, sc.jpsq);
        EXPECT_DOUBLE_EQ(row.utility, direct);
        if (row.policy == "fixed") fixed_total += row.utility;
    }
    EXPECT_DOUBLE_EQ(rep.totals[0].second, fixed_total);
}

TEST(Allocation, UserSweepShape) {
    const auto sc = parse(demo_json());
    const std::vector<std::string> policies{"fixed", "random"};
    const auto rows = run_user_sweep(sc, policies, 2, 10, 3);
    EXPECT_EQ(rows.size(), 18u);
    std::size_t fixed = 0;
    for (const auto& r : rows) fixed += r.policy == "fixed" ? 1 : 0;
    EXPECT_EQ(fixed, 9u);
}

TEST(Reports, CsvReaderAndSvg) {
    std::istringstream in("episode,reward\n0,1.5\n1,2.5\n");
    const auto t = read_csv(in);
    EXPECT_EQ(t.rows.size(), 2u);
    EXPECT_EQ(t.rows[1][t.column("reward")], "2.5");
    std::ostringstream svg;
    write_svg_plot(svg, t, "episode", "reward", "", "trace");
    EXPECT_NE(svg.str().find("<svg"), std::string::npos);
}

TEST(Cli, SimulateIsByteIdentical) {
    const auto out = fs::temp_directory_path() / "semcom_test_cli";
    fs::remove_all(out);
    const std::string cli = SEMCOM_CLI;
    const auto scenario = (demo_dir() / "scenario.json").string();
    for (const char* run : {"a", "b"}) {
        const auto cmd = cli + " simulate " + scenario + " --out-dir " + (out / run).string() + " > /dev/null";
        ASSERT_EQ(std::system(cmd.c_str()), 0);
    }
    for (const char* f : {"users.csv", "summary.csv", "robustness.csv"}) {
        EXPECT_EQ(slurp(out / "a" / f), slurp(out / "b" / f)) << f;
        EXPECT_FALSE(slurp(out / "a" / f).empty());
    }
}
