// One PASS/FAIL line per acceptance criterion. `--only <name>` runs a single
// criterion; the exit status is non-zero when any selected criterion fails.

#include <malloc.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "semcom/demo.hpp"
#include "semcom/semcom.hpp"

using namespace semcom;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string format(const char* fmt, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, fmt, args...);
    return buf;
}

// ---------------------------------------------------------------------------

Outcome packing_oracle() {
    const auto t0 = Clock::now();
    Rng rng(2024, 1);
    std::size_t mismatches = 0;
    for (int inst = 0; inst < 1000; ++inst) {
        const auto words = static_cast<std::size_t>(1 + rng.below(6));
        std::vector<CleanSegment> segs;
        std::vector<std::set<Pixel>> sets;
        ImportanceVector s;
        for (std::size_t w = 0; w < words; ++w) {
            std::set<Pixel> px;
            const auto rects = rng.below(3);
            for (std::uint64_t r = 0; r < rects; ++r) {
                const auto x0 = static_cast<int>(rng.below(32)), y0 = static_cast<int>(rng.below(32));
                const auto x1 = std::min(32, x0 + 1 + static_cast<int>(rng.below(16)));
                const auto y1 = std::min(32, y0 + 1 + static_cast<int>(rng.below(16)));
                for (int y = y0; y < y1; ++y) {
                    for (int x = x0; x < x1; ++x) px.insert({x, y});
                }
            }
            const auto scatter = rng.below(40);
            for (std::uint64_t k = 0; k < scatter; ++k) {
                px.insert({static_cast<int>(rng.below(32)), static_cast<int>(rng.below(32))});
            }
            const int index = static_cast<int>(w * 2 + rng.below(2));
            segs.push_back({index, {px.begin(), px.end()}});
            sets.push_back(px);
            s.order.push_back(index);
            // coarse importances so that ties occur
            s.s.push_back(static_cast<double>(rng.below(4)) / 4.0);
        }
        const auto info = pack(segs, s);
        const auto ref = oracle::pack(sets, s.order, s.s);
        std::size_t total = 0;
        bool same = info.blocks.size() == ref.size();
        for (std::size_t k = 0; same && k < ref.size(); ++k) {
            same = info.blocks[k].word_index == ref[k].word && info.blocks[k].pixels == ref[k].pixels;
            total += ref[k].pixels.size();
        }
        if (!same || info.total_tokens != total) ++mismatches;
    }
    const double secs = seconds_since(t0);
    return {mismatches == 0 && secs < 10.0, format("1000 instances, %zu mismatches, %.2f s (limit 10 s)", mismatches, secs)};
}

Outcome dbscan_oracle() {
    const auto t0 = Clock::now();
    Rng rng(2024, 2);
    std::size_t mismatches = 0, clusters = 0, noise = 0;
    for (int inst = 0; inst < 500; ++inst) {
        std::set<Pixel> uniq;
        const auto side = static_cast<int>(16 + rng.below(48));
        const auto target = std::min<std::size_t>(1 + rng.below(500), static_cast<std::size_t>(side * side / 2));
        // blobs plus uniform scatter
        const auto blobs = 1 + rng.below(5);
        while (uniq.size() < target) {
            if (rng.uniform() < 0.3) {
                uniq.insert({static_cast<int>(rng.below(static_cast<std::uint64_t>(side))),
                             static_cast<int>(rng.below(static_cast<std::uint64_t>(side)))});
            } else {
                Rng c = rng.split(rng.below(blobs));
                const double cx = c.uniform(0, side), cy = c.uniform(0, side), r = c.uniform(1, 6);
                const int x = static_cast<int>(std::lround(cx + r * rng.normal()));
                const int y = static_cast<int>(std::lround(cy + r * rng.normal()));
                if (x >= 0 && y >= 0 && x < side && y < side) uniq.insert({x, y});
            }
        }
        const std::vector<Pixel> pts(uniq.begin(), uniq.end());
        const double eps = rng.uniform(1.0, 3.0);
        const auto minp = static_cast<std::size_t>(1 + rng.below(8));
        const auto lab = dbscan_labels(pts, eps, minp);
        const auto ref = oracle::dbscan(pts, eps, minp);
        if (lab.points != pts || lab.label != ref) ++mismatches;
        clusters += lab.cluster_count;
        noise += static_cast<std::size_t>(std::count(ref.begin(), ref.end(), -1));
    }
    const double secs = seconds_since(t0);
    return {mismatches == 0 && secs < 30.0,
            format("500 point sets (%zu clusters, %zu noise points), %zu mismatches, %.2f s (limit 30 s)", clusters,
                   noise, mismatches, secs)};
}

Outcome reduction_ratio_arithmetic() {
    const std::size_t tokens[] = {80481, 163984, 105088, 183296};
    const double reported[] = {0.693, 0.274, 0.600, 0.301};
    bool pass = true;
    std::string detail;
    for (int k = 0; k < 4; ++k) {
        const double r = reduction_ratio(tokens[k], 512, 512);
        const bool ok = std::abs(r - reported[k]) <= 0.0005;
        pass = pass && ok;
        detail += format("%s%zu -> %.2f%% (reported %.1f%%%s)", k ? ", " : "", tokens[k], 100 * r, 100 * reported[k],
                         ok ? "" : ", outside 0.05 pp");
    }
    return {pass, detail};
}

Outcome jpsq_identities() {
    Rng rng(2024, 4);
    std::size_t bad_d = 0, bad_q = 0, bad_gate = 0;
    for (int k = 0; k < 10000; ++k) {
        JpsqParams p;
        p.omega0 = rng.uniform(0.5, 3.0);
        p.q_th = rng.uniform(1.0, 9.0);
        p.t_max = rng.uniform(0.05, 2.0);
        p.omega1 = rng.uniform(1.0, 1000.0);
        p.omega2 = rng.uniform(0.001, 1.0);
        const double q = rng.uniform(1.0, 10.0);
        const double d = rng.uniform(0.0, p.t_max);
        if (jpsq(p.t_max, q, p) != 0.0) ++bad_d;
        if (jpsq(d, p.q_th / p.omega0, p) != 0.0) ++bad_q;
        const double low_q = p.q_th * rng.uniform(0.1, 1.0);
        if (low_q >= p.q_th) continue;
        const double b = std::floor(rng.uniform(0.0, 1e5));
        if (user_utility(jpsq(d, low_q, p), low_q, b, p) != -p.omega2 * b) ++bad_gate;
    }
    return {bad_d + bad_q + bad_gate == 0,
            format("10^4 random points: %zu nonzero at D = t_max, %zu nonzero at Q = Q_th/w0, %zu gate violations",
                   bad_d, bad_q, bad_gate)};
}

Outcome channel_formula() {
    Rng rng(2024, 5);
    std::size_t bad_unit = 0, bad_phi = 0, bad_p = 0;
    for (int k = 0; k < 10000; ++k) {
        ChannelConfig cfg;
        cfg.bandwidth_hz = rng.uniform(1e3, 1e8);
        cfg.noise_w_per_hz = std::pow(10.0, rng.uniform(-20, -12));
        cfg.power_w = std::ldexp(1.0, static_cast<int>(rng.below(12)) - 6);
        UserLink link;
        link.distance_m = std::ldexp(1.0, static_cast<int>(rng.below(16)));
        link.interference_w = rng.uniform() < 0.5 ? 0.0 : std::pow(10.0, rng.uniform(-15, -9));
        // P * gamma / d^2 = I + W N0 exactly: powers of two scale without rounding.
        const double floor = link.interference_w + cfg.bandwidth_hz * cfg.noise_w_per_hz;
        link.rayleigh = floor * link.distance_m * link.distance_m / cfg.power_w;
        if (capacity(cfg, link) != cfg.bandwidth_hz) ++bad_unit;

        UserLink a = link;
        a.rayleigh = rng.uniform(0.01, 4.0);
        a.distance_m = rng.uniform(10.0, 1e4);
        UserLink b = a;
        b.rayleigh *= 1.0 + rng.uniform(0.01, 1.0);
        if (!(capacity(cfg, b) > capacity(cfg, a))) ++bad_phi;
        ChannelConfig louder = cfg;
        louder.power_w *= 1.0 + rng.uniform(0.01, 1.0);
        if (!(capacity(louder, a) > capacity(cfg, a))) ++bad_p;
    }
    return {bad_unit + bad_phi + bad_p == 0,
            format("10^4 random configs: %zu with capacity(SNR=1) != W, %zu phi and %zu P monotonicity violations",
                   bad_unit, bad_phi, bad_p)};
}

Outcome gradient_checks() {
    double worst_critic = 0.0, worst_policy = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto r = gradcheck::run(1000 + seed);
        worst_critic = std::max(worst_critic, r.critic);
        worst_policy = std::max(worst_policy, r.policy);
    }
    return {worst_critic < 1e-4 && worst_policy < 1e-4,
            format("100 seeds on 2-4-1 networks: worst relative error critic %.2e, policy %.2e (limit 1e-4)",
                   worst_critic, worst_policy)};
}

// One-sided paired t-test of mean(a - b) > 0.
double paired_p_value(const std::vector<double>& a, const std::vector<double>& b) {
    const auto n = static_cast<double>(a.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
    mean /= n;
    double var = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) var += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
    var /= n - 1;
    if (var == 0.0) return mean > 0 ? 0.0 : 1.0;
    const double t = mean / std::sqrt(var / n);
    return boost::math::cdf(boost::math::complement(boost::math::students_t(n - 1), t));
}

Outcome add_convergence() {
    add::SyntheticConfig env_cfg;
    env_cfg.users = 1;
    env_cfg.seed = 3;
    const add::SyntheticTableEnv env(env_cfg);

    add::AddHyper h;
    h.steps = 5;
    h.episodes = 2000;
    h.updates_per_episode = 4;
    h.hidden = {64, 64};
    h.lr = 1e-3;
    h.reward_scale = 0.01;
    h.token_scale = 4096;
    h.seed = 5;

    const auto t0 = Clock::now();
    auto agent = add::AddAgent::create(env_cfg.users, h);
    const auto trace = add::train(agent, env, h);
    const double secs = seconds_since(t0);

    Rng states(2024, 7), baseline_rng(2024, 8);
    std::vector<double> u_add, u_opt, u_fixed, u_random;
    std::size_t unique = 0, within5 = 0;
    for (int k = 0; k < 200; ++k) {
        const auto s = env.sample_state(states);
        const auto opt = add::exhaustive_optimum(env, s);
        unique += opt.unique ? 1 : 0;
        u_add.push_back(env.utility(s, add::allocate(agent, s).tokens));
        u_opt.push_back(opt.utility);
        u_fixed.push_back(env.utility(s, add::baseline_allocate(add::Baseline::fixed, s, baseline_rng).tokens));
        u_random.push_back(env.utility(s, add::baseline_allocate(add::Baseline::random, s, baseline_rng).tokens));
        within5 += u_add.back() >= opt.utility - 0.05 * std::abs(opt.utility) ? 1 : 0;
    }
    auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); };
    const double ratio = mean(u_add) / mean(u_opt);
    const double p_fixed = paired_p_value(u_add, u_fixed);
    const double p_random = paired_p_value(u_add, u_random);

    // Trend of the 100-episode moving average over the final third.
    const auto& r = trace.rewards;
    std::vector<double> ma;
    for (std::size_t e = 2 * r.size() / 3; e + 100 <= r.size(); ++e) {
        ma.push_back(std::accumulate(r.begin() + static_cast<std::ptrdiff_t>(e), r.begin() + static_cast<std::ptrdiff_t>(e + 100), 0.0) / 100.0);
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < ma.size(); ++i) {
        const double x = static_cast<double>(i);
        sx += x, sy += ma[i], sxx += x * x, sxy += x * ma[i];
    }
    const double m = static_cast<double>(ma.size());
    const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);

    const bool pass = unique == 200 && ratio >= 0.9 && p_fixed < 0.01 && p_random < 0.01 && secs < 600.0;
    return {pass, format("1 user, T = 5, %zu episodes in %.0f s (limit 600 s); %zu/200 states with a unique optimum; "
                         "mean utility ADD %.2f, optimum %.2f (ratio %.3f, need 0.9), fixed %.2f (p = %.1e), "
                         "random %.2f (p = %.1e), alpha 0.01; %zu/200 states within 5%% of optimum; final-third "
                         "moving-average slope %+.4f per episode",
                         h.episodes, secs, unique, mean(u_add), mean(u_opt), ratio, mean(u_fixed), p_fixed,
                         mean(u_random), p_random, within5, slope)};
}

// Random dependency trees over a random POS mix with random non-empty masks.
Outcome importance_pipeline() {
    const auto r = run_pipeline(demo::blue_car(), {}, {});
    const auto& imp = r.analysis.importance;
    const auto top = static_cast<std::size_t>(std::max_element(imp.s.begin(), imp.s.end()) - imp.s.begin());
    const bool root_first = imp.order[top] == 3;

    Rng rng(2024, 9);
    double worst = 0.0;
    for (int k = 0; k < 1000; ++k) {
        const auto m = static_cast<int>(1 + rng.below(10));
        const int root = static_cast<int>(rng.below(static_cast<std::uint64_t>(m)));
        std::vector<WordAnnotation> words;
        for (int i = 0; i < m; ++i) {
            auto pos = static_cast<Pos>(rng.below(8));
            if (i == root && pos == Pos::X) pos = Pos::VERB;
            int head = -1;
            if (i != root) {
                do head = static_cast<int>(rng.below(static_cast<std::uint64_t>(m)));
                while (head == i);
            }
            words.push_back({i, "w", pos, head, "dep"});
        }
        const auto f = filter_words(words);
        std::vector<BinaryAttentionMap> maps;
        for (int w : f.retained) {
            BinaryAttentionMap b{w, Grid<std::uint8_t>(12, 12, 0)};
            for (auto& v : b.mask.values()) v = rng.uniform() < 0.3 ? 1 : 0;
            b.mask(rng.below(12), rng.below(12)) = 1;
            maps.push_back(std::move(b));
        }
        const auto a = analyze_prompt(words, maps);
        const double sum = std::accumulate(a.importance.s.begin(), a.importance.s.end(), 0.0);
        worst = std::max(worst, std::abs(sum - 1.0));
    }
    return {root_first && worst <= 1e-9,
            format("demo fixture argmax = \"%s\" (root verb \"driving\" expected); 1000 random fixtures, worst |sum(s) - 1| = %.1e",
                   demo::blue_car().words[static_cast<std::size_t>(imp.order[top])].text.c_str(), worst)};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

Outcome determinism() {
    const auto dir = fs::temp_directory_path() / "semcom_acceptance_determinism";
    fs::remove_all(dir);
    const std::string cli = SEMCOM_CLI;
    auto run = [&](const std::string& args) { return std::system((cli + " " + args + " > /dev/null").c_str()); };
    if (run("make-demo " + (dir / "demo").string()) != 0) return {false, "make-demo failed"};
    for (const char* out : {"a", "b"}) {
        if (run("simulate " + (dir / "demo" / "scenario.json").string() + " --out-dir " + (dir / out).string()) != 0) {
            return {false, "simulate failed"};
        }
    }
    std::size_t files = 0, differ = 0, bytes = 0;
    for (const auto& e : fs::directory_iterator(dir / "a")) {
        const auto a = slurp(e.path());
        const auto b = slurp(dir / "b" / e.path().filename());
        ++files;
        bytes += a.size();
        differ += (a != b || a.empty()) ? 1 : 0;
    }
    return {files >= 3 && differ == 0, format("simulate run twice: %zu CSV files, %zu bytes, %zu differ", files, bytes, differ)};
}

}  // namespace

int main(int argc, char** argv) {
    // Keep large matrices on the heap instead of fresh mappings per training step.
    mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"packing_oracle", packing_oracle},
        {"dbscan_oracle", dbscan_oracle},
        {"reduction_ratio", reduction_ratio_arithmetic},
        {"jpsq_identities", jpsq_identities},
        {"channel_formula", channel_formula},
        {"gradient_checks", gradient_checks},
        {"add_convergence", add_convergence},
        {"importance_pipeline", importance_pipeline},
        {"determinism", determinism},
    };
    std::string only;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--only" && i + 1 < argc) {
            only = argv[++i];
        } else {
            std::fprintf(stderr, "usage: %s [--only <criterion>]\n", argv[0]);
            return 2;
        }
    }
    int failures = 0, ran = 0;
    for (const auto& [name, fn] : criteria) {
        if (!only.empty() && name != only) continue;
        ++ran;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("[%s] %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
        std::fflush(stdout);
        failures += o.pass ? 0 : 1;
    }
    if (ran == 0) {
        std::fprintf(stderr, "unknown criterion \"%s\"\n", only.c_str());
        return 2;
    }
    return failures == 0 ? 0 : 1;
}
