#pragma once

// Small hand-built corpus: two 64x64 bundles, a score table, and scenario
// files wired to them. Deterministic; used by `semcom make-demo` and tests.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semcom/bundle.hpp"
#include "semcom/harness.hpp"
#include "semcom/metrics.hpp"
#include "semcom/rng.hpp"

namespace semcom::demo {

inline constexpr std::size_t kSide = 64;

struct Shape {
    enum class Kind { ellipse, rect } kind;
    double cx, cy, rx, ry;  // rect: centre and half-extents
    double weight = 1.0;
};

// 1 inside the shape, falling off linearly over `soft` pixels outside.
inline double shape_value(const Shape& s, double x, double y, double soft = 3.0) {
    double outside;
    if (s.kind == Shape::Kind::ellipse) {
        const double r = std::hypot((x - s.cx) / s.rx, (y - s.cy) / s.ry);
        outside = (r - 1.0) * std::min(s.rx, s.ry);
    } else {
        outside = std::max(std::abs(x - s.cx) - s.rx, std::abs(y - s.cy) - s.ry);
    }
    return s.weight * std::clamp(1.0 - outside / soft, 0.0, 1.0);
}

// Shapes plus isolated speckles and one tiny clump, over a faint floor.
inline Grid<float> render(const std::vector<Shape>& shapes, Rng& rng, std::size_t speckles) {
    Grid<float> g(kSide, kSide, 0.0f);
    for (std::size_t y = 0; y < kSide; ++y) {
        for (std::size_t x = 0; x < kSide; ++x) {
            double v = 0.02 * rng.uniform();
            for (const auto& s : shapes) v = std::max(v, shape_value(s, static_cast<double>(x), static_cast<double>(y)));
            g(x, y) = static_cast<float>(v);
        }
    }
    for (std::size_t k = 0; k < speckles; ++k) {
        g(static_cast<std::size_t>(rng.below(kSide)), static_cast<std::size_t>(rng.below(kSide))) = 1.0f;
    }
    const auto cx = 2 + static_cast<std::size_t>(rng.below(kSide - 6));
    for (std::size_t dy = 0; dy < 3; ++dy) {
        for (std::size_t dx = 0; dx < 3; ++dx) g(cx + dx, 1 + dy) = 1.0f;
    }
    return g;
}

struct WordSpec {
    std::string text;
    Pos pos;
    int head;
    std::string dep;
    std::vector<Shape> shapes;
};

inline SemComBundle build(const std::string& prompt, const std::string& id, const std::vector<WordSpec>& words,
                          std::uint64_t seed) {
    Rng rng(seed, 0xDE30);
    SemComBundle b;
    b.prompt = prompt;
    b.image_width = b.image_height = kSide;
    b.source_image_id = id;
    for (std::size_t i = 0; i < words.size(); ++i) {
        const auto& w = words[i];
        b.words.push_back({static_cast<int>(i), w.text, w.pos, w.head, w.dep});
        b.maps.emplace_back(AttentionMap{static_cast<int>(i), render(w.shapes, rng, w.shapes.empty() ? 40 : 6)});
    }
    validate(b);
    return b;
}

using K = Shape::Kind;

// "A blue car driving through the city ." with the verb as root.
inline SemComBundle blue_car() {
    const Shape car{K::ellipse, 30, 42, 14, 7};
    const Shape roof{K::ellipse, 30, 36, 8, 4};
    const Shape road{K::rect, 32, 53, 31, 6};
    const Shape skyline{K::rect, 32, 14, 28, 10};
    const Shape tower{K::rect, 50, 24, 5, 8};
    return build("A blue car driving through the city .", "blue_car",
                 {{"A", Pos::X, 2, "det", {}},
                  {"blue", Pos::ADJ, 2, "amod", {roof}},
                  {"car", Pos::NN, 3, "nsubj", {car}},
                  {"driving", Pos::VERB, -1, "ROOT", {car, road}},
                  {"through", Pos::ADP, 3, "prep", {road}},
                  {"the", Pos::X, 6, "det", {}},
                  {"city", Pos::NN, 4, "pobj", {skyline, tower}},
                  {".", Pos::X, 3, "punct", {}}},
                 11);
}

// "A bus is stopped on a dark road ."
inline SemComBundle bus() {
    const Shape body{K::rect, 28, 34, 16, 9};
    const Shape road{K::rect, 32, 54, 31, 7};
    const Shape shade{K::ellipse, 48, 16, 12, 9};
    return build("A bus is stopped on a dark road .", "bus",
                 {{"A", Pos::X, 1, "det", {}},
                  {"bus", Pos::NN, 3, "nsubjpass", {body}},
                  {"is", Pos::X, 3, "auxpass", {}},
                  {"stopped", Pos::VERB, -1, "ROOT", {body, Shape{K::rect, 28, 44, 16, 2}}},
                  {"on", Pos::ADP, 3, "prep", {road}},
                  {"a", Pos::X, 7, "det", {}},
                  {"dark", Pos::ADJ, 7, "amod", {road, shade}},
                  {"road", Pos::NN, 4, "pobj", {road}},
                  {".", Pos::X, 3, "punct", {}}},
                 12);
}

// Writes bundles/, scores.csv, scenario.json (proxy scorer) and
// scenario_table.json (table scorer) under `dir`.
inline void write_demo(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir / "bundles", ec);
    if (ec) throw IoError("cannot create " + (dir / "bundles").string() + ": " + ec.message());
    const std::vector<std::pair<std::string, SemComBundle>> corpus = {{"blue_car", blue_car()}, {"bus", bus()}};
    for (const auto& [name, b] : corpus) save_bundle(b, dir / "bundles" / name);

    // Score table from the proxy curve on a 16-step budget grid.
    const ProxyScorer proxy;
    const XiScheme xi;
    const DbscanParams db;
    ScoreTable table;
    for (const auto& [name, b] : corpus) {
        const auto info = run_pipeline(b, xi, db).info;
        std::size_t prev = 0;
        for (std::size_t k = 0; k <= 16; ++k) {
            const auto t = info.total_tokens * k / 16;
            if (k > 0 && t == prev) continue;
            prev = t;
            const auto s = proxy.score(name, truncate(info, t));
            table.add(name, {static_cast<double>(t), s.distance, s.quality});
        }
    }
    {
        std::ofstream os(dir / "scores.csv");
        if (!os) throw IoError("cannot write " + (dir / "scores.csv").string());
        table.write_csv(os);
    }

    nlohmann::json sc = {
        {"seed", 7},
        {"corpus", {"bundles/blue_car", "bundles/bus"}},
        {"users",
         {{{"bundle", "bundles/blue_car"}, {"distance_m", 25000.0}, {"latency_s", 0.2}, {"interference_w", 0.0}},
          {{"bundle", "bundles/bus"}, {"distance_m", 30000.0}, {"latency_s", 0.2}, {"interference_w", 0.0}},
          {{"bundle", "bundles/blue_car"}, {"distance_m", 40000.0}, {"latency_s", 0.2}, {"interference_w", 1e-12}}}},
        {"channel", {{"W_hz", 1e5}, {"P_w", 1.0}, {"N0_w_per_hz", 1e-16}, {"bits_per_token", 88}, {"O", 1.0}, {"seed", 0}}},
        {"jpsq", {{"omega0", 1.25}, {"q_th", 4.9827}, {"t_max", 0.5}, {"omega1", 500.0}, {"omega2", 0.05}}},
        {"xi_scheme", {{"PROPN", 0.9}, {"NN", 0.8}, {"default", 0.5}}},
        {"dbscan", {{"eps", 2.0}, {"min_points", 5}, {"min_cluster_size", 30}}},
        {"scorer", {{"kind", "proxy"}}},
        {"add",
         {{"T", 5}, {"gamma", 0.95}, {"lr", 1e-3}, {"batch_size", 64}, {"episodes", 400}, {"hidden", {64, 64}},
          {"sync_period", 50}, {"reward_scale", 0.01}, {"token_scale", 4096.0}}},
        {"experiment",
         {{"states", 40},
          {"policies", {"fixed", "random"}},
          {"robustness_grid", {0, 250, 500, 1000, 1500, 2000, 3000, 4096}},
          {"sweep_from", 2},
          {"sweep_to", 10}}}};
    auto write_json = [&](const fs::path& p, const nlohmann::json& j) {
        std::ofstream os(p);
        if (!os) throw IoError("cannot write " + p.string());
        os << j.dump(2) << '\n';
    };
    write_json(dir / "scenario.json", sc);
    sc["scorer"] = {{"kind", "table"}, {"path", "scores.csv"}};
    sc["experiment"]["policies"] = {"fixed", "random", "greedy"};
    write_json(dir / "scenario_table.json", sc);
}

}  // namespace semcom::demo
