#pragma once

// Per-word semantic importance from the dependency parse and the overlap of
// the words' binary attention maps.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "semcom/bundle.hpp"
#include "semcom/error.hpp"

namespace semcom {

template <typename T>
class SquareMatrix {
public:
    SquareMatrix() = default;
    explicit SquareMatrix(std::size_t n, T fill = T{}) : n_(n), data_(n * n, Cell{fill}) {}

    std::size_t order() const { return n_; }
    T& operator()(std::size_t row, std::size_t col) { return data_[row * n_ + col].v; }
    const T& operator()(std::size_t row, std::size_t col) const { return data_[row * n_ + col].v; }

    friend bool operator==(const SquareMatrix&, const SquareMatrix&) = default;

private:
    // Wrapped so that SquareMatrix<bool> hands out real references.
    struct Cell {
        T v;
        friend bool operator==(const Cell&, const Cell&) = default;
    };

    std::size_t n_ = 0;
    std::vector<Cell> data_;
};

// Row = head, column = dependent.
struct DependencyMatrix {
    std::vector<int> order;  // original word index of each row/column
    SquareMatrix<bool> arcs;
};

struct DependencyLevelMatrix {
    std::vector<int> order;
    SquareMatrix<double> levels;  // pairwise mIoU
};

struct ImportanceVector {
    std::vector<int> order;
    std::vector<double> s;
};

struct FilteredWords {
    std::vector<int> retained;  // non-X word indices in prompt order
    std::size_t zeta = 0;       // number of X-type words removed
};

inline FilteredWords filter_words(std::span<const WordAnnotation> words) {
    if (words.empty()) throw Error("filter_words: empty prompt");
    FilteredWords out;
    for (const auto& w : words) {
        if (w.pos == Pos::X) {
            ++out.zeta;
        } else {
            out.retained.push_back(w.index);
        }
    }
    if (out.retained.empty()) throw Error("filter_words: every word is X-type, no semantic content");
    return out;
}

struct DependencyMatrices {
    DependencyMatrix full;        // M x M over all words
    DependencyMatrix compressed;  // X-type rows/columns deleted
};

inline DependencyMatrices build_dependency_matrices(std::span<const WordAnnotation> words,
                                                    std::span<const int> retained) {
    const std::size_t m = words.size();
    DependencyMatrices out;
    out.full.order.resize(m);
    out.full.arcs = SquareMatrix<bool>(m, false);
    for (std::size_t i = 0; i < m; ++i) {
        out.full.order[i] = static_cast<int>(i);
        out.full.arcs(i, i) = true;
    }
    for (const auto& w : words) {
        if (w.head_index >= 0) {
            out.full.arcs(static_cast<std::size_t>(w.head_index), static_cast<std::size_t>(w.index)) = true;
        }
    }
    const std::size_t n = retained.size();
    out.compressed.order.assign(retained.begin(), retained.end());
    out.compressed.arcs = SquareMatrix<bool>(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out.compressed.arcs(i, j) = out.full.arcs(static_cast<std::size_t>(retained[i]),
                                                      static_cast<std::size_t>(retained[j]));
        }
    }
    return out;
}

// |a ∩ b| / |a ∪ b|.
inline double miou(const BinaryAttentionMap& a, const BinaryAttentionMap& b) {
    if (a.mask.width() != b.mask.width() || a.mask.height() != b.mask.height()) {
        throw Error("miou: mask dimensions differ");
    }
    std::size_t inter = 0;
    std::size_t uni = 0;
    const auto& va = a.mask.values();
    const auto& vb = b.mask.values();
    for (std::size_t i = 0; i < va.size(); ++i) {
        inter += static_cast<std::size_t>(va[i] & vb[i]);
        uni += static_cast<std::size_t>(va[i] | vb[i]);
    }
    if (uni == 0) throw Error("miou: both masks are empty");
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// `maps[k]` must belong to retained word `order[k]`.
inline DependencyLevelMatrix build_level_matrix(std::span<const int> order,
                                                std::span<const BinaryAttentionMap> maps) {
    if (order.size() != maps.size()) throw Error("build_level_matrix: one map per retained word required");
    const std::size_t n = maps.size();
    DependencyLevelMatrix out{{order.begin(), order.end()}, SquareMatrix<double>(n, 0.0)};
    for (std::size_t i = 0; i < n; ++i) {
        out.levels(i, i) = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = miou(maps[i], maps[j]);
            out.levels(i, j) = v;
            out.levels(j, i) = v;
        }
    }
    return out;
}

// Arc-weighted dependency score per word: each word collects the level of
// every arc it heads or depends on, with its self-pair counted once.
inline std::vector<double> dependency_scores(const DependencyMatrix& c, const DependencyLevelMatrix& d) {
    if (c.order != d.order) throw Error("importance: dependency and level matrices disagree on word order");
    const std::size_t n = c.order.size();
    std::vector<double> r(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = -d.levels(i, i);
        for (std::size_t j = 0; j < n; ++j) {
            if (c.arcs(i, j)) acc += d.levels(i, j);
            if (c.arcs(j, i)) acc += d.levels(j, i);
        }
        r[i] = acc;
    }
    return r;
}

inline std::vector<double> softmax(std::span<const double> r) {
    std::vector<double> s(r.size());
    if (r.empty()) return s;
    const double peak = *std::max_element(r.begin(), r.end());
    double total = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        s[i] = std::exp(r[i] - peak);
        total += s[i];
    }
    for (auto& v : s) v /= total;
    return s;
}

inline ImportanceVector importance(const DependencyMatrix& c, const DependencyLevelMatrix& d) {
    const auto r = dependency_scores(c, d);
    return {c.order, softmax(r)};
}

// Everything the extraction stage derives for one prompt.
struct PromptAnalysis {
    FilteredWords filtered;
    DependencyMatrices dependencies;
    DependencyLevelMatrix levels;
    ImportanceVector importance;
};

inline PromptAnalysis analyze_prompt(std::span<const WordAnnotation> words,
                                     std::span<const BinaryAttentionMap> retained_maps) {
    PromptAnalysis a;
    a.filtered = filter_words(words);
    a.dependencies = build_dependency_matrices(words, a.filtered.retained);
    a.levels = build_level_matrix(a.filtered.retained, retained_maps);
    a.importance = importance(a.dependencies.compressed, a.levels);
    return a;
}

}  // namespace semcom
