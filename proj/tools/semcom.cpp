// semcom: command-line front end for extraction, packing, simulation and the
// ADD allocator.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "semcom/demo.hpp"
#include "semcom/semcom.hpp"

namespace fs = std::filesystem;
using namespace semcom;

namespace {

std::ofstream open_out(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::binary);
    if (!os) throw IoError("cannot write " + p.string());
    return os;
}

// Binary PPM (P6, maxval 255).
Grid<Rgb> read_ppm(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("cannot open image " + p.string());
    std::string magic;
    std::size_t w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P6" || w == 0 || h == 0 || maxval != 255) throw ConfigError("image must be a binary PPM (P6, maxval 255)");
    in.get();
    std::vector<Rgb> px(w * h);
    in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size() * 3));
    if (!in) throw ConfigError("image " + p.string() + " is truncated");
    return Grid<Rgb>(w, h, std::move(px));
}

ColorLookup color_source(const std::string& image, const SemComBundle& b) {
    if (image.empty()) return [](const Pixel&) { return Rgb{0, 0, 0}; };
    auto img = std::make_shared<Grid<Rgb>>(read_ppm(image));
    if (img->width() != b.image_width || img->height() != b.image_height) {
        throw ConfigError("image dimensions differ from the bundle's");
    }
    return [img](const Pixel& p) { return (*img)(static_cast<std::size_t>(p.x), static_cast<std::size_t>(p.y)); };
}

template <typename T, typename F>
void write_matrix_csv(const fs::path& path, const std::vector<int>& order, const SemComBundle& b, const T& m, F cell) {
    auto os = open_out(path);
    os << "head\\dependent";
    for (int j : order) os << ',' << b.words[static_cast<std::size_t>(j)].text;
    os << '\n';
    for (std::size_t i = 0; i < order.size(); ++i) {
        os << b.words[static_cast<std::size_t>(order[i])].text;
        for (std::size_t j = 0; j < order.size(); ++j) os << ',' << cell(m(i, j));
        os << '\n';
    }
}

struct PipelineOpts {
    double eps = 2.0;
    std::size_t min_points = 5;
    std::size_t min_cluster_size = 30;
    double xi_propn = 0.9, xi_nn = 0.8, xi_default = 0.5;

    void add_to(CLI::App* app) {
        app->add_option("--eps", eps, "DBSCAN radius in pixels")->capture_default_str();
        app->add_option("--min-points", min_points, "DBSCAN core threshold")->capture_default_str();
        app->add_option("--min-cluster-size", min_cluster_size, "smallest cluster kept")->capture_default_str();
        app->add_option("--xi-propn", xi_propn)->capture_default_str();
        app->add_option("--xi-nn", xi_nn)->capture_default_str();
        app->add_option("--xi-default", xi_default)->capture_default_str();
    }

    XiScheme xi() const {
        XiScheme s;
        s.by_pos = {{Pos::PROPN, xi_propn}, {Pos::NN, xi_nn}};
        s.fallback = xi_default;
        s.validate();
        return s;
    }

    DbscanParams dbscan() const {
        if (!(eps > 0) || min_points == 0) throw ConfigError("--eps must be > 0 and --min-points >= 1");
        return {eps, min_points, min_cluster_size};
    }
};

void cmd_extract(const std::string& dir, const PipelineOpts& o, const std::string& dump, const std::string& image,
                 const std::string& csv_dir) {
    const auto b = load_bundle(dir);
    const auto r = run_pipeline(b, o.xi(), o.dbscan());
    const auto& order = r.analysis.importance.order;
    std::printf("prompt: %s\n", b.prompt.c_str());
    std::printf("image: %zux%zu, words: %zu, retained: %zu\n", b.image_width, b.image_height, b.words.size(), order.size());
    std::printf("%-12s %-6s %10s %10s %10s\n", "word", "pos", "importance", "segment", "sent");
    for (std::size_t k = 0; k < order.size(); ++k) {
        const auto& w = b.words[static_cast<std::size_t>(order[k])];
        std::size_t sent = 0;
        for (const auto& blk : r.info.blocks) {
            if (blk.word_index == order[k]) sent = blk.pixels.size();
        }
        std::printf("%-12s %-6s %10.4f %10zu %10zu\n", w.text.c_str(), std::string(to_string(w.pos)).c_str(),
                    r.analysis.importance.s[k], r.segments[k].pixels.size(), sent);
    }
    std::printf("tokens: %zu of %zu, reduction ratio: %.4f\n", r.info.total_tokens, b.image_width * b.image_height,
                reduction_ratio(r.info, b.image_width, b.image_height));

    if (!dump.empty()) {
        auto os = open_out(dump);
        write_token_stream(os, r.info.stream(), color_source(image, b));
        std::printf("wrote %zu tokens to %s\n", r.info.total_tokens, dump.c_str());
    }
    if (!csv_dir.empty()) {
        const fs::path out(csv_dir);
        fs::create_directories(out);
        write_matrix_csv(out / "dependency_full.csv", r.analysis.dependencies.full.order, b,
                         r.analysis.dependencies.full.arcs, [](bool v) { return v ? 1 : 0; });
        write_matrix_csv(out / "dependency_compressed.csv", order, b, r.analysis.dependencies.compressed.arcs,
                         [](bool v) { return v ? 1 : 0; });
        write_matrix_csv(out / "dependency_levels.csv", order, b, r.analysis.levels.levels,
                         [](double v) { return fmt_num(v); });
        auto imp = open_out(out / "importance.csv");
        imp << "word_index,word,importance\n";
        for (std::size_t k = 0; k < order.size(); ++k) {
            imp << order[k] << ',' << b.words[static_cast<std::size_t>(order[k])].text << ',' << fmt_num(r.analysis.importance.s[k]) << '\n';
        }
        for (const auto& m : r.maps) {
            const auto lab = dbscan_labels(mask_pixels(m), o.eps, o.min_points);
            auto os = open_out(out / ("clusters_word" + std::to_string(m.word_index) + ".csv"));
            os << "x,y,cluster_id\n";
            for (std::size_t i = 0; i < lab.points.size(); ++i) {
                os << lab.points[i].x << ',' << lab.points[i].y << ',' << lab.label[i] << '\n';
            }
        }
        std::printf("wrote matrices and clusters to %s\n", csv_dir.c_str());
    }
}

void cmd_pack(const std::string& dir, const PipelineOpts& o, std::size_t budget, const std::string& dump,
              const std::string& image) {
    const auto b = load_bundle(dir);
    const auto r = run_pipeline(b, o.xi(), o.dbscan());
    const auto prefix = truncate(r.info, budget);
    const auto score = ProxyScorer().score("", prefix);
    std::printf("budget: %zu, sent: %zu of %zu\n", budget, prefix.tokens_used, r.info.total_tokens);
    std::printf("%-12s %10s %10s\n", "word", "importance", "coverage");
    for (const auto& c : prefix.coverage) {
        std::printf("%-12s %10.4f %10.4f\n", b.words[static_cast<std::size_t>(c.word_index)].text.c_str(), c.importance,
                    c.coverage);
    }
    std::printf("proxy score: dreamsim %.4f, nima_mu %.4f\n", score.distance, score.quality);
    if (!dump.empty()) {
        auto os = open_out(dump);
        write_token_stream(os, prefix.pixels, color_source(image, b));
    }
}

void cmd_simulate(const std::string& path, const std::string& out_dir) {
    const auto sc = load_scenario(path, seed_from_env());
    const ScenarioEnv env(sc);
    const auto rep = run_simulation(sc, env);
    const fs::path out(out_dir);
    fs::create_directories(out);
    {
        auto os = open_out(out / "users.csv");
        rep.write_users_csv(os);
    }
    {
        auto os = open_out(out / "summary.csv");
        rep.write_summary_csv(os);
    }
    if (!sc.experiment.robustness_grid.empty()) {
        auto os = open_out(out / "robustness.csv");
        write_robustness_csv(os, run_robustness_sweep(sc, env, sc.experiment.robustness_grid));
    }
    std::printf("users: %zu, mean reduction: %.4f, mean Q drop: %.4f, total utility: %.4f\n", rep.rows.size(),
                rep.mean_reduction, rep.mean_q_drop, rep.total_utility);
    std::printf("config hash %s, reports in %s\n", rep.config_hash.c_str(), out_dir.c_str());
}

void cmd_train(const std::string& path, const std::string& ckpt, const std::string& trace, std::size_t episodes) {
    auto sc = load_scenario(path, seed_from_env());
    if (episodes > 0) sc.add.episodes = episodes;
    const ScenarioEnv env(sc);
    auto agent = add::AddAgent::create(env.users(), sc.add);
    const auto res = add::train(agent, env, sc.add);
    add::save_agent(agent, ckpt);
    if (!trace.empty()) {
        auto os = open_out(trace);
        write_trace_csv(os, res.rewards);
    }
    const std::size_t tail = std::min<std::size_t>(100, res.rewards.size());
    double mean = 0.0;
    for (std::size_t e = res.rewards.size() - tail; e < res.rewards.size(); ++e) mean += res.rewards[e];
    std::printf("episodes: %zu, gradient steps: %zu, mean reward (last %zu): %.4f\n", res.rewards.size(),
                res.gradient_steps, tail, tail ? mean / static_cast<double>(tail) : 0.0);
    std::printf("checkpoint: %s\n", ckpt.c_str());
}

void cmd_eval(const std::string& path, std::vector<std::string> policies, std::size_t states, const std::string& out_dir,
              bool sweep) {
    const auto sc = load_scenario(path, seed_from_env());
    if (policies.empty()) policies = sc.experiment.policies;
    if (states == 0) states = sc.experiment.states;
    const fs::path out(out_dir);
    fs::create_directories(out);
    if (sweep) {
        for (const auto& p : policies) {
            if (p != "fixed" && p != "random" && p != "greedy") {
                throw ConfigError("the user sweep takes baseline policies only; \"" + p + "\" is not one");
            }
        }
        const auto rows = run_user_sweep(sc, policies, sc.experiment.sweep_from, sc.experiment.sweep_to, states);
        auto os = open_out(out / "sweep.csv");
        write_sweep_csv(os, rows);
        std::printf("wrote %zu sweep rows to %s\n", rows.size(), (out / "sweep.csv").c_str());
        return;
    }
    const ScenarioEnv env(sc);
    std::vector<Policy> ps;
    for (const auto& p : policies) {
        if (p == "fixed" || p == "random" || p == "greedy") {
            ps.push_back(baseline_policy(p, env, sc.seed));
        } else {
            auto agent = std::make_shared<const add::AddAgent>(add::load_agent(p));
            if (agent->policy.config().users != env.users()) {
                throw ConfigError("checkpoint " + p + " was trained for " + std::to_string(agent->policy.config().users) +
                                  " users, scenario has " + std::to_string(env.users()));
            }
            ps.push_back(add_policy(agent, fs::path(p).stem().string()));
        }
    }
    const auto rep = run_allocation_experiment(env, ps, states, env.state_rng());
    {
        auto os = open_out(out / "allocations.csv");
        rep.write_rows_csv(os);
    }
    {
        auto os = open_out(out / "policies.csv");
        rep.write_totals_csv(os, states);
    }
    for (const auto& [p, t] : rep.totals) {
        std::printf("%-12s total utility %.4f (mean %.4f per state)\n", p.c_str(), t, t / static_cast<double>(states));
    }
}

void cmd_report(const std::string& input, const std::string& format, const std::string& output) {
    std::ifstream in(input);
    if (!in) throw ConfigError("cannot open " + input);
    const auto t = read_csv(in);
    std::ostringstream os;
    if (format == "csv") {
        if (t.has("policy") && t.has("state") && t.has("utility")) {
            // allocations -> per-policy totals
            std::vector<std::string> names;
            std::map<std::string, double> total;
            std::map<std::string, std::set<std::string>> seen;
            for (const auto& r : t.rows) {
                const auto& p = r[t.column("policy")];
                if (!total.count(p)) names.push_back(p);
                total[p] += std::stod(r[t.column("utility")]);
                seen[p].insert(r[t.column("state")]);
            }
            os << "policy,states,total_utility,mean_utility\n";
            for (const auto& p : names) {
                os << p << ',' << seen[p].size() << ',' << fmt_num(total[p]) << ','
                   << fmt_num(total[p] / static_cast<double>(seen[p].size())) << '\n';
            }
        } else if (t.has("episode") && t.has("reward")) {
            // trace -> 100-episode moving average
            os << "episode,reward,moving_avg\n";
            std::vector<double> r;
            double acc = 0.0;
            for (const auto& row : t.rows) {
                r.push_back(std::stod(row[t.column("reward")]));
                acc += r.back();
                if (r.size() > 100) acc -= r[r.size() - 101];
                os << row[t.column("episode")] << ',' << row[t.column("reward")] << ','
                   << fmt_num(acc / static_cast<double>(std::min<std::size_t>(r.size(), 100))) << '\n';
            }
        } else {
            throw ConfigError("report: unrecognised CSV (expected allocations or a reward trace)");
        }
    } else if (format == "svg") {
        if (t.has("episode") && t.has("reward")) {
            write_svg_plot(os, t, "episode", "reward", "", "reward per episode");
        } else if (t.has("users") && t.has("mean_utility")) {
            write_svg_plot(os, t, "users", "mean_utility", "policy", "utility against user count");
        } else if (t.has("tokens") && t.has("nima_mu") && t.has("bundle")) {
            write_svg_plot(os, t, "tokens", "nima_mu", "bundle", "quality against token budget");
        } else if (t.has("policy") && t.has("state") && t.has("utility")) {
            write_svg_plot(os, t, "state", "utility", "policy", "per-user utility by state");
        } else {
            throw ConfigError("report: no plot for this CSV layout");
        }
    } else {
        throw ConfigError("report: --format must be csv or svg");
    }
    if (output.empty()) {
        std::cout << os.str();
    } else {
        auto f = open_out(output);
        f << os.str();
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Attention-aware semantic extraction and bandwidth allocation"};
    app.require_subcommand(1);

    PipelineOpts popts;
    std::string bundle, dump, image, csv_dir, scenario, out_dir = "out", ckpt, trace, input, format = "csv", output;
    std::size_t budget = 0, episodes = 0, states = 0;
    std::vector<std::string> policies;
    bool sweep = false;

    auto* extract = app.add_subcommand("extract", "run the extraction pipeline on a bundle");
    extract->add_option("bundle", bundle, "bundle directory")->required();
    popts.add_to(extract);
    extract->add_option("--dump-stream", dump, "write the 11-byte token stream here");
    extract->add_option("--image", image, "PPM source image for token colours");
    extract->add_option("--csv-dir", csv_dir, "write matrices, importance and clusters as CSV");

    auto* pack_cmd = app.add_subcommand("pack", "truncate the packed stream to a budget");
    pack_cmd->add_option("bundle", bundle, "bundle directory")->required();
    popts.add_to(pack_cmd);
    pack_cmd->add_option("--budget", budget, "token budget")->required();
    pack_cmd->add_option("--dump-stream", dump, "write the transmitted tokens here");
    pack_cmd->add_option("--image", image, "PPM source image for token colours");

    auto* simulate = app.add_subcommand("simulate", "one channel draw, every user sends its budget");
    simulate->add_option("scenario", scenario, "scenario JSON")->required();
    simulate->add_option("--out-dir", out_dir, "report directory")->capture_default_str();

    auto* train_cmd = app.add_subcommand("train-add", "train the ADD allocator on a scenario");
    train_cmd->add_option("scenario", scenario, "scenario JSON")->required();
    train_cmd->add_option("--out", ckpt, "checkpoint path")->required();
    train_cmd->add_option("--trace", trace, "write the reward trace CSV here");
    train_cmd->add_option("--episodes", episodes, "override add.episodes");

    auto* eval = app.add_subcommand("eval", "compare allocation policies on seeded states");
    eval->add_option("scenario", scenario, "scenario JSON")->required();
    eval->add_option("--policy", policies, "fixed, random, greedy or a checkpoint path (repeatable)");
    eval->add_option("--states", states, "evaluation states (default: experiment.states)");
    eval->add_option("--out-dir", out_dir, "report directory")->capture_default_str();
    eval->add_flag("--sweep", sweep, "sweep the user count over experiment.sweep_from..sweep_to");

    auto* report = app.add_subcommand("report", "summarise or plot a CSV produced by the other commands");
    report->add_option("input", input, "CSV file")->required();
    report->add_option("--format", format, "csv or svg")->capture_default_str();
    report->add_option("--out", output, "output file (default stdout)");

    auto* demo = app.add_subcommand("make-demo", "write a small demo corpus and scenarios");
    demo->add_option("dir", out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*extract) cmd_extract(bundle, popts, dump, image, csv_dir);
        if (*pack_cmd) cmd_pack(bundle, popts, budget, dump, image);
        if (*simulate) cmd_simulate(scenario, out_dir);
        if (*train_cmd) cmd_train(scenario, ckpt, trace, episodes);
        if (*eval) cmd_eval(scenario, policies, states, out_dir, sweep);
        if (*report) cmd_report(input, format, output);
        if (*demo) {
            demo::write_demo(out_dir);
            std::printf("demo corpus written to %s\n", out_dir.c_str());
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
