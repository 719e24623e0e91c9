#pragma once

// Importance-ordered, de-duplicated pixel-token stream and its truncation to
// a bandwidth budget.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "semcom/error.hpp"
#include "semcom/grid.hpp"
#include "semcom/prompt_analysis.hpp"
#include "semcom/segmentation.hpp"

namespace semcom {

struct SemanticBlock {
    int word_index = 0;
    double importance = 0.0;
    std::vector<Pixel> pixels;  // pixels first sent by this block, row-major
    // Stream position of every pixel of this word's clean segment, ascending;
    // its size is the segment size.
    std::vector<std::size_t> segment_positions;
};

struct SemanticInfo {
    std::vector<SemanticBlock> blocks;  // descending importance
    std::size_t total_tokens = 0;

    // Flattened stream position -> pixel.
    Pixel at(std::size_t position) const {
        for (const auto& b : blocks) {
            if (position < b.pixels.size()) return b.pixels[position];
            position -= b.pixels.size();
        }
        throw Error("SemanticInfo::at: position past end of stream");
    }

    std::vector<Pixel> stream() const {
        std::vector<Pixel> out;
        out.reserve(total_tokens);
        for (const auto& b : blocks) out.insert(out.end(), b.pixels.begin(), b.pixels.end());
        return out;
    }
};

struct WordCoverage {
    int word_index = 0;
    double importance = 0.0;
    double coverage = 0.0;  // fraction of the word's clean segment transmitted
};

struct TransmittedPrefix {
    std::vector<Pixel> pixels;
    std::size_t tokens_used = 0;
    std::vector<WordCoverage> coverage;  // block order
};

// Words sorted by descending importance (ties by prompt position); block k is
// segment k minus everything already sent.
inline SemanticInfo pack(std::span<const CleanSegment> segments, const ImportanceVector& s) {
    if (segments.size() != s.order.size() || s.s.size() != s.order.size()) {
        throw Error("pack: segments and importance vector must cover the same words");
    }
    std::unordered_map<int, std::size_t> seg_of;
    for (std::size_t k = 0; k < segments.size(); ++k) seg_of[segments[k].word_index] = k;

    std::vector<std::size_t> rank(s.order.size());
    std::iota(rank.begin(), rank.end(), std::size_t{0});
    std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
        if (s.s[a] != s.s[b]) return s.s[a] > s.s[b];
        return s.order[a] < s.order[b];
    });

    SemanticInfo info;
    std::unordered_map<std::uint64_t, std::size_t> position;  // pixel -> stream position
    for (const auto r : rank) {
        const auto it = seg_of.find(s.order[r]);
        if (it == seg_of.end()) throw Error("pack: no segment for word " + std::to_string(s.order[r]));
        auto pixels = segments[it->second].pixels;
        std::sort(pixels.begin(), pixels.end());
        pixels.erase(std::unique(pixels.begin(), pixels.end()), pixels.end());

        SemanticBlock block{s.order[r], s.s[r], {}, {}};
        block.segment_positions.reserve(pixels.size());
        for (const auto& p : pixels) {
            const auto [pos, inserted] = position.try_emplace(pixel_key(p), info.total_tokens);
            if (inserted) {
                block.pixels.push_back(p);
                ++info.total_tokens;
            }
            block.segment_positions.push_back(pos->second);
        }
        std::sort(block.segment_positions.begin(), block.segment_positions.end());
        info.blocks.push_back(std::move(block));
    }
    return info;
}

// First min(budget, total) tokens. An empty segment counts as covered in
// proportion to the whole stream.
inline TransmittedPrefix truncate(const SemanticInfo& info, std::size_t budget_tokens) {
    TransmittedPrefix out;
    out.tokens_used = std::min(budget_tokens, info.total_tokens);
    out.pixels.reserve(out.tokens_used);
    std::size_t remaining = out.tokens_used;
    for (const auto& b : info.blocks) {
        const auto take = std::min(remaining, b.pixels.size());
        out.pixels.insert(out.pixels.end(), b.pixels.begin(), b.pixels.begin() + static_cast<std::ptrdiff_t>(take));
        remaining -= take;
    }
    for (const auto& b : info.blocks) {
        double cov;
        if (b.segment_positions.empty()) {
            cov = info.total_tokens == 0 ? 1.0
                                         : static_cast<double>(out.tokens_used) / static_cast<double>(info.total_tokens);
        } else {
            const auto sent = std::lower_bound(b.segment_positions.begin(), b.segment_positions.end(), out.tokens_used) -
                              b.segment_positions.begin();
            cov = static_cast<double>(sent) / static_cast<double>(b.segment_positions.size());
        }
        out.coverage.push_back({b.word_index, b.importance, cov});
    }
    return out;
}

inline double reduction_ratio(std::size_t total_tokens, std::size_t width, std::size_t height) {
    if (width == 0 || height == 0) throw Error("reduction_ratio: zero-area image");
    return 1.0 - static_cast<double>(total_tokens) / static_cast<double>(width * height);
}

inline double reduction_ratio(const SemanticInfo& info, std::size_t width, std::size_t height) {
    return reduction_ratio(info.total_tokens, width, height);
}

// ---------------------------------------------------------------------------
// Token wire layout: u32 LE x, u32 LE y, R, G, B -> 11 bytes.

inline constexpr std::size_t kTokenBytes = 11;

using Rgb = std::array<std::uint8_t, 3>;
using ColorLookup = std::function<Rgb(const Pixel&)>;

inline void encode_token(const Pixel& p, const Rgb& rgb, std::span<std::uint8_t, kTokenBytes> out) {
    const auto x = static_cast<std::uint32_t>(p.x);
    const auto y = static_cast<std::uint32_t>(p.y);
    for (int i = 0; i < 4; ++i) {
        out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(x >> (8 * i));
        out[static_cast<std::size_t>(4 + i)] = static_cast<std::uint8_t>(y >> (8 * i));
    }
    out[8] = rgb[0];
    out[9] = rgb[1];
    out[10] = rgb[2];
}

inline void write_token_stream(std::ostream& os, std::span<const Pixel> pixels, const ColorLookup& color) {
    std::array<std::uint8_t, kTokenBytes> buf{};
    for (const auto& p : pixels) {
        encode_token(p, color ? color(p) : Rgb{0, 0, 0}, buf);
        os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }
}

inline std::vector<std::pair<Pixel, Rgb>> decode_token_stream(std::span<const std::uint8_t> bytes) {
    if (bytes.size() % kTokenBytes != 0) throw Error("token stream length is not a multiple of 11");
    std::vector<std::pair<Pixel, Rgb>> out;
    for (std::size_t off = 0; off < bytes.size(); off += kTokenBytes) {
        std::uint32_t x = 0;
        std::uint32_t y = 0;
        for (int i = 0; i < 4; ++i) {
            x |= static_cast<std::uint32_t>(bytes[off + static_cast<std::size_t>(i)]) << (8 * i);
            y |= static_cast<std::uint32_t>(bytes[off + 4 + static_cast<std::size_t>(i)]) << (8 * i);
        }
        out.push_back({Pixel{static_cast<std::int32_t>(x), static_cast<std::int32_t>(y)},
                       Rgb{bytes[off + 8], bytes[off + 9], bytes[off + 10]}});
    }
    return out;
}

}  // namespace semcom
