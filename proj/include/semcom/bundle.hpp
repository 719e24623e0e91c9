#pragma once

// Portable container for one prompt: words with linguistic annotations plus a
// per-word attention map, stored as a directory holding `manifest.json` and
// little-endian float32 payload files.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "semcom/error.hpp"
#include "semcom/grid.hpp"

namespace semcom {

static_assert(std::endian::native == std::endian::little,
              "payload I/O assumes a little-endian host");

enum class Pos { NN, PROPN, NUM, ADJ, VERB, ADV, ADP, X };

inline constexpr std::array<std::string_view, 8> kPosNames = {"NN",   "PROPN", "NUM", "ADJ",
                                                             "VERB", "ADV",   "ADP", "X"};

inline std::string_view to_string(Pos p) { return kPosNames[static_cast<std::size_t>(p)]; }

inline std::optional<Pos> parse_pos(std::string_view s) {
    for (std::size_t i = 0; i < kPosNames.size(); ++i) {
        if (kPosNames[i] == s) return static_cast<Pos>(i);
    }
    return std::nullopt;
}

struct WordAnnotation {
    int index = 0;
    std::string text;
    Pos pos = Pos::X;
    int head_index = -1;  // -1 marks the root
    std::string dep_label;

    friend bool operator==(const WordAnnotation&, const WordAnnotation&) = default;
};

struct AttentionMap {
    int word_index = 0;
    Grid<float> values;

    friend bool operator==(const AttentionMap&, const AttentionMap&) = default;
};

struct BinaryAttentionMap {
    int word_index = 0;
    Grid<std::uint8_t> mask;  // 0 or 1

    std::size_t count() const {
        return static_cast<std::size_t>(std::count(mask.values().begin(), mask.values().end(), 1));
    }

    friend bool operator==(const BinaryAttentionMap&, const BinaryAttentionMap&) = default;
};

enum class Direction { down, up };

struct RawScore {
    int step = 1;   // diffusion step, 1-based
    int block = 1;  // UNet block, 1-based
    int head = 1;   // attention head, 1-based
    Direction direction = Direction::down;
    Grid<float> grid;  // softmax scores in [0, 1]

    friend bool operator==(const RawScore&, const RawScore&) = default;
};

// Multi-scale cross-attention scores for one word before aggregation.
struct RawScoreStack {
    int word_index = 0;
    std::vector<RawScore> entries;

    friend bool operator==(const RawScoreStack&, const RawScoreStack&) = default;
};

using WordMap = std::variant<AttentionMap, BinaryAttentionMap, RawScoreStack>;

inline int word_index_of(const WordMap& m) {
    return std::visit([](const auto& v) { return v.word_index; }, m);
}

struct SemComBundle {
    static constexpr int kVersion = 1;

    int version = kVersion;
    std::string prompt;
    std::size_t image_width = 0;
    std::size_t image_height = 0;
    std::vector<WordAnnotation> words;
    std::vector<WordMap> maps;  // one per word, ordered by word index
    std::optional<std::string> source_image_id;

    const WordMap& map_for(int word_index) const {
        for (const auto& m : maps) {
            if (word_index_of(m) == word_index) return m;
        }
        throw Error("bundle has no map for word " + std::to_string(word_index));
    }

    friend bool operator==(const SemComBundle&, const SemComBundle&) = default;
};

// ---------------------------------------------------------------------------
// Attention aggregation

struct AggregateOptions {
    // Bicubic overshoot can go negative; clamp so the aggregate stays >= 0.
    bool clamp_negative = true;
};

namespace detail {

// Catmull-Rom cubic convolution kernel (a = -0.5).
inline double cubic_kernel(double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

struct Taps {
    std::array<std::size_t, 4> index;
    std::array<double, 4> weight;
};

// Half-pixel-centre mapping from output to input coordinates with
// border replication.
inline std::vector<Taps> cubic_taps(std::size_t in, std::size_t out) {
    std::vector<Taps> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    const auto last = static_cast<std::ptrdiff_t>(in) - 1;
    for (std::size_t o = 0; o < out; ++o) {
        const double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        const auto base = static_cast<std::ptrdiff_t>(std::floor(src));
        for (int k = 0; k < 4; ++k) {
            const std::ptrdiff_t i = base - 1 + k;
            taps[o].index[k] = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, last));
            taps[o].weight[k] = cubic_kernel(src - static_cast<double>(i));
        }
    }
    return taps;
}

}  // namespace detail

// Separable bicubic resize of `src` to width x height.
inline Grid<double> bicubic_resize(const Grid<float>& src, std::size_t width, std::size_t height) {
    if (src.empty() || width == 0 || height == 0) throw Error("bicubic_resize: empty grid");
    const auto xs = detail::cubic_taps(src.width(), width);
    const auto ys = detail::cubic_taps(src.height(), height);

    Grid<double> rows(width, src.height());
    for (std::size_t y = 0; y < src.height(); ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            double acc = 0.0;
            for (int k = 0; k < 4; ++k) acc += xs[x].weight[k] * src(xs[x].index[k], y);
            rows(x, y) = acc;
        }
    }
    Grid<double> out(width, height);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            double acc = 0.0;
            for (int k = 0; k < 4; ++k) acc += ys[y].weight[k] * rows(x, ys[y].index[k]);
            out(x, y) = acc;
        }
    }
    return out;
}

// Upscales every entry to (width, height) and sums over steps, blocks, heads
// and both directions.
inline AttentionMap aggregate_attention(const RawScoreStack& stack, std::size_t width,
                                        std::size_t height, AggregateOptions opts = {}) {
    if (stack.entries.empty()) {
        throw Error("aggregate_attention: empty score stack for word " +
                    std::to_string(stack.word_index));
    }
    std::vector<double> acc(width * height, 0.0);
    for (const auto& e : stack.entries) {
        if (e.grid.empty()) throw Error("aggregate_attention: empty grid in stack");
        const auto up = bicubic_resize(e.grid, width, height);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += up.values()[i];
    }
    AttentionMap out{stack.word_index, Grid<float>(width, height)};
    for (std::size_t i = 0; i < acc.size(); ++i) {
        const double v = opts.clamp_negative ? std::max(acc[i], 0.0) : acc[i];
        out.values.values()[i] = static_cast<float>(v);
    }
    return out;
}

// mask = value >= xi * max(value).
inline BinaryAttentionMap binarize(const AttentionMap& map, double xi) {
    if (!(xi >= 0.0 && xi <= 1.0)) throw ConfigError("binarize: xi must lie in [0, 1]");
    const auto& v = map.values.values();
    if (v.empty()) throw Error("binarize: empty attention map");
    const double peak = *std::max_element(v.begin(), v.end());
    if (!(peak > 0.0)) {
        throw Error("binarize: degenerate attention (no positive value) for word " +
                    std::to_string(map.word_index));
    }
    const double threshold = xi * peak;
    BinaryAttentionMap out{map.word_index,
                           Grid<std::uint8_t>(map.values.width(), map.values.height())};
    for (std::size_t i = 0; i < v.size(); ++i) {
        out.mask.values()[i] = static_cast<double>(v[i]) >= threshold ? 1 : 0;
    }
    return out;
}

// Resolves any stored map kind to a binary mask; `xi` is ignored for maps
// stored already binarized.
inline BinaryAttentionMap binary_map_for(const SemComBundle& b, int word_index, double xi) {
    const auto& m = b.map_for(word_index);
    if (const auto* bin = std::get_if<BinaryAttentionMap>(&m)) return *bin;
    if (const auto* agg = std::get_if<AttentionMap>(&m)) return binarize(*agg, xi);
    const auto& raw = std::get<RawScoreStack>(m);
    return binarize(aggregate_attention(raw, b.image_width, b.image_height), xi);
}

// ---------------------------------------------------------------------------
// Validation

inline void validate(const SemComBundle& b) {
    auto fail = [](const std::string& what) { throw ConfigError("bundle: " + what); };
    if (b.version != SemComBundle::kVersion) {
        fail("version = " + std::to_string(b.version) + ", only version 1 is supported");
    }
    if (b.image_width == 0 || b.image_height == 0) fail("image_width/image_height must be > 0");
    if (b.words.empty()) fail("words is empty");
    const auto m = static_cast<int>(b.words.size());
    int roots = 0;
    for (int i = 0; i < m; ++i) {
        const auto& w = b.words[static_cast<std::size_t>(i)];
        const std::string field = "words[" + std::to_string(i) + "]";
        if (w.index != i) fail(field + ".index = " + std::to_string(w.index) + ", expected " + std::to_string(i));
        if (w.head_index == -1) {
            ++roots;
        } else if (w.head_index < 0 || w.head_index >= m) {
            fail(field + ".head_index = " + std::to_string(w.head_index) + " out of range [0, " +
                 std::to_string(m) + ")");
        } else if (w.head_index == i) {
            fail(field + ".head_index points at itself");
        }
    }
    if (roots != 1) fail("expected exactly one root word (head_index = -1), found " + std::to_string(roots));

    if (b.maps.size() != b.words.size()) {
        fail("maps has " + std::to_string(b.maps.size()) + " entries for " + std::to_string(m) + " words");
    }
    for (int i = 0; i < m; ++i) {
        const auto& wm = b.maps[static_cast<std::size_t>(i)];
        const std::string field = "maps[" + std::to_string(i) + "]";
        if (word_index_of(wm) != i) fail(field + ".word_index = " + std::to_string(word_index_of(wm)) + ", expected " + std::to_string(i));
        if (const auto* agg = std::get_if<AttentionMap>(&wm)) {
            if (agg->values.width() != b.image_width || agg->values.height() != b.image_height) {
                fail(field + " dimensions differ from the image dimensions");
            }
            for (float v : agg->values.values()) {
                if (!(v >= 0.0f) || !std::isfinite(v)) fail(field + " has a negative or non-finite value");
            }
        } else if (const auto* bin = std::get_if<BinaryAttentionMap>(&wm)) {
            if (bin->mask.width() != b.image_width || bin->mask.height() != b.image_height) {
                fail(field + " dimensions differ from the image dimensions");
            }
            for (auto v : bin->mask.values()) {
                if (v > 1) fail(field + " binary mask holds a value other than 0/1");
            }
        } else {
            const auto& raw = std::get<RawScoreStack>(wm);
            if (raw.entries.empty()) fail(field + ".entries is empty");
            for (std::size_t k = 0; k < raw.entries.size(); ++k) {
                const auto& e = raw.entries[k];
                const std::string ef = field + ".entries[" + std::to_string(k) + "]";
                if (e.grid.empty()) fail(ef + " grid is empty");
                if (e.step < 1 || e.block < 1 || e.head < 1) fail(ef + " t/block/head must be >= 1");
                for (float v : e.grid.values()) {
                    if (!(v >= 0.0f && v <= 1.0f)) fail(ef + " score outside [0, 1]");
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// On-disk format

namespace detail {

inline std::vector<float> read_f32_file(const std::filesystem::path& file, std::size_t expected) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw ConfigError("bundle: cannot open map file " + file.string());
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes != expected * sizeof(float)) {
        throw ConfigError("bundle: map file " + file.filename().string() + " has " +
                          std::to_string(bytes) + " bytes, expected " +
                          std::to_string(expected * sizeof(float)) + " (width*height*4)");
    }
    in.seekg(0);
    std::vector<float> out(expected);
    in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw IoError("bundle: short read on " + file.string());
    return out;
}

inline void write_f32_file(const std::filesystem::path& file, const std::vector<float>& data) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + file.string());
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!out) throw IoError("write failed for " + file.string());
}

template <typename T>
T json_get(const nlohmann::json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) throw ConfigError("manifest: missing field " + where + "." + key);
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("manifest: field " + where + "." + key + " has the wrong type");
    }
}

}  // namespace detail

inline SemComBundle load_bundle(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    using detail::json_get;
    const fs::path manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw ConfigError("bundle: cannot open " + manifest_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("manifest: malformed JSON in " + manifest_path.string() + ": " + e.what());
    }

    SemComBundle b;
    b.version = json_get<int>(j, "version", "manifest");
    if (b.version != SemComBundle::kVersion) {
        throw ConfigError("manifest: version = " + std::to_string(b.version) +
                          ", only version 1 is supported");
    }
    b.prompt = json_get<std::string>(j, "prompt", "manifest");
    const auto w = json_get<long long>(j, "image_width", "manifest");
    const auto h = json_get<long long>(j, "image_height", "manifest");
    if (w <= 0 || h <= 0) throw ConfigError("manifest: image_width/image_height must be > 0");
    b.image_width = static_cast<std::size_t>(w);
    b.image_height = static_cast<std::size_t>(h);
    if (j.contains("source_image_id") && !j["source_image_id"].is_null()) {
        b.source_image_id = json_get<std::string>(j, "source_image_id", "manifest");
    }

    const auto words = j.value("words", nlohmann::json::array());
    for (std::size_t i = 0; i < words.size(); ++i) {
        const std::string where = "words[" + std::to_string(i) + "]";
        WordAnnotation wa;
        wa.index = json_get<int>(words[i], "index", where);
        wa.text = json_get<std::string>(words[i], "text", where);
        const auto pos = json_get<std::string>(words[i], "pos", where);
        const auto parsed = parse_pos(pos);
        if (!parsed) throw ConfigError("manifest: " + where + ".pos = \"" + pos + "\" is not a known tag");
        wa.pos = *parsed;
        wa.head_index = json_get<int>(words[i], "head_index", where);
        wa.dep_label = words[i].value("dep_label", std::string{});
        b.words.push_back(std::move(wa));
    }

    const auto maps = j.value("maps", nlohmann::json::array());
    const std::size_t pixels = b.image_width * b.image_height;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        const std::string where = "maps[" + std::to_string(i) + "]";
        const int wi = json_get<int>(maps[i], "word_index", where);
        const auto kind = json_get<std::string>(maps[i], "kind", where);
        if (kind == "aggregated") {
            auto data = detail::read_f32_file(dir / json_get<std::string>(maps[i], "file", where), pixels);
            b.maps.emplace_back(AttentionMap{wi, Grid<float>(b.image_width, b.image_height, std::move(data))});
        } else if (kind == "binary") {
            const auto data = detail::read_f32_file(dir / json_get<std::string>(maps[i], "file", where), pixels);
            Grid<std::uint8_t> mask(b.image_width, b.image_height);
            for (std::size_t k = 0; k < pixels; ++k) {
                if (data[k] != 0.0f && data[k] != 1.0f) {
                    throw ConfigError("manifest: " + where + " binary payload holds a value other than 0.0/1.0");
                }
                mask.values()[k] = data[k] == 1.0f ? 1 : 0;
            }
            b.maps.emplace_back(BinaryAttentionMap{wi, std::move(mask)});
        } else if (kind == "raw") {
            RawScoreStack stack{wi, {}};
            const auto entries = maps[i].value("entries", nlohmann::json::array());
            for (std::size_t k = 0; k < entries.size(); ++k) {
                const std::string ew = where + ".entries[" + std::to_string(k) + "]";
                RawScore e;
                e.step = json_get<int>(entries[k], "t", ew);
                e.block = json_get<int>(entries[k], "block", ew);
                e.head = json_get<int>(entries[k], "head", ew);
                const auto dir_s = json_get<std::string>(entries[k], "direction", ew);
                if (dir_s == "down") {
                    e.direction = Direction::down;
                } else if (dir_s == "up") {
                    e.direction = Direction::up;
                } else {
                    throw ConfigError("manifest: " + ew + ".direction must be \"down\" or \"up\"");
                }
                const auto ew_w = json_get<long long>(entries[k], "width", ew);
                const auto ew_h = json_get<long long>(entries[k], "height", ew);
                if (ew_w <= 0 || ew_h <= 0) throw ConfigError("manifest: " + ew + " width/height must be > 0");
                const auto gw = static_cast<std::size_t>(ew_w);
                const auto gh = static_cast<std::size_t>(ew_h);
                auto data = detail::read_f32_file(dir / json_get<std::string>(entries[k], "file", ew), gw * gh);
                e.grid = Grid<float>(gw, gh, std::move(data));
                stack.entries.push_back(std::move(e));
            }
            b.maps.emplace_back(std::move(stack));
        } else {
            throw ConfigError("manifest: " + where + ".kind = \"" + kind +
                              "\" (expected aggregated, binary or raw)");
        }
    }
    std::sort(b.maps.begin(), b.maps.end(),
              [](const WordMap& a, const WordMap& c) { return word_index_of(a) < word_index_of(c); });
    validate(b);
    return b;
}

inline void save_bundle(const SemComBundle& b, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    validate(b);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create bundle directory " + dir.string() + ": " + ec.message());

    nlohmann::json j;
    j["version"] = b.version;
    j["prompt"] = b.prompt;
    j["image_width"] = b.image_width;
    j["image_height"] = b.image_height;
    if (b.source_image_id) j["source_image_id"] = *b.source_image_id;
    j["words"] = nlohmann::json::array();
    for (const auto& w : b.words) {
        j["words"].push_back({{"index", w.index},
                              {"text", w.text},
                              {"pos", std::string(to_string(w.pos))},
                              {"head_index", w.head_index},
                              {"dep_label", w.dep_label}});
    }
    j["maps"] = nlohmann::json::array();
    for (const auto& m : b.maps) {
        const int wi = word_index_of(m);
        const std::string stem = "word" + std::to_string(wi);
        if (const auto* agg = std::get_if<AttentionMap>(&m)) {
            const auto file = stem + ".bin";
            detail::write_f32_file(dir / file, agg->values.values());
            j["maps"].push_back({{"word_index", wi}, {"kind", "aggregated"}, {"file", file}});
        } else if (const auto* bin = std::get_if<BinaryAttentionMap>(&m)) {
            const auto file = stem + ".bin";
            std::vector<float> data(bin->mask.values().begin(), bin->mask.values().end());
            detail::write_f32_file(dir / file, data);
            j["maps"].push_back({{"word_index", wi}, {"kind", "binary"}, {"file", file}});
        } else {
            const auto& raw = std::get<RawScoreStack>(m);
            nlohmann::json entries = nlohmann::json::array();
            for (std::size_t k = 0; k < raw.entries.size(); ++k) {
                const auto& e = raw.entries[k];
                const auto file = stem + "_raw" + std::to_string(k) + ".bin";
                detail::write_f32_file(dir / file, e.grid.values());
                entries.push_back({{"t", e.step},
                                   {"block", e.block},
                                   {"head", e.head},
                                   {"direction", e.direction == Direction::down ? "down" : "up"},
                                   {"width", e.grid.width()},
                                   {"height", e.grid.height()},
                                   {"file", file}});
            }
            j["maps"].push_back({{"word_index", wi}, {"kind", "raw"}, {"entries", std::move(entries)}});
        }
    }
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed for " + (dir / "manifest.json").string());
}

}  // namespace semcom
