#pragma once

// Density-based cleaning of binary attention maps.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <unordered_map>
#include <vector>

#include "semcom/bundle.hpp"
#include "semcom/error.hpp"
#include "semcom/grid.hpp"

namespace semcom {

struct DbscanParams {
    double eps = 2.0;
    std::size_t min_points = 5;
    std::size_t min_cluster_size = 30;
};

struct AttentionCluster {
    std::vector<Pixel> points;  // row-major order
    bool is_noise = false;
};

// Per-point labels in scan order; kNoise for noise.
struct DbscanLabels {
    static constexpr int kNoise = -1;
    std::vector<Pixel> points;  // sorted row-major (the scan order)
    std::vector<int> label;
    std::size_t cluster_count = 0;
};

namespace detail {

// Fixed-radius neighbour search over a hash of cells of side eps.
class CellIndex {
public:
    CellIndex(std::span<const Pixel> pts, double eps)
        : pts_(pts), eps2_(eps * eps), cell_(std::max(eps, 1e-9)) {
        reach_ = static_cast<std::int64_t>(std::ceil(eps / cell_));
        for (std::size_t i = 0; i < pts.size(); ++i) cells_[key(cell_of(pts[i].x), cell_of(pts[i].y))].push_back(i);
    }

    // Indices q with d(p, q) <= eps, including p itself.
    void neighbours(std::size_t p, std::vector<std::size_t>& out) const {
        out.clear();
        const auto cx = cell_of(pts_[p].x);
        const auto cy = cell_of(pts_[p].y);
        for (auto dy = -reach_; dy <= reach_; ++dy) {
            for (auto dx = -reach_; dx <= reach_; ++dx) {
                const auto it = cells_.find(key(cx + dx, cy + dy));
                if (it == cells_.end()) continue;
                for (auto q : it->second) {
                    const double ddx = pts_[q].x - pts_[p].x;
                    const double ddy = pts_[q].y - pts_[p].y;
                    if (ddx * ddx + ddy * ddy <= eps2_) out.push_back(q);
                }
            }
        }
    }

private:
    std::int64_t cell_of(std::int32_t v) const {
        return static_cast<std::int64_t>(std::floor(static_cast<double>(v) / cell_));
    }
    static std::uint64_t key(std::int64_t cx, std::int64_t cy) {
        return (static_cast<std::uint64_t>(cy) << 32) ^ static_cast<std::uint64_t>(cx & 0xffffffff);
    }

    std::span<const Pixel> pts_;
    double eps2_;
    double cell_;
    std::int64_t reach_ = 1;
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

}  // namespace detail

// Points are scanned in row-major order; a border point joins the first
// cluster (in seed order) that reaches it.
inline DbscanLabels dbscan_labels(std::vector<Pixel> points, double eps, std::size_t min_points) {
    if (!(eps > 0.0)) throw ConfigError("dbscan: eps must be > 0");
    if (min_points < 1) throw ConfigError("dbscan: min_points must be >= 1");
    std::sort(points.begin(), points.end());
    points.erase(std::unique(points.begin(), points.end()), points.end());

    constexpr int kUnvisited = -2;
    DbscanLabels out;
    out.points = std::move(points);
    const std::size_t n = out.points.size();
    out.label.assign(n, kUnvisited);
    if (n == 0) return out;

    const detail::CellIndex index(out.points, eps);
    std::vector<std::size_t> nb;
    std::vector<std::size_t> nb2;
    std::deque<std::size_t> frontier;
    int cluster = 0;
    for (std::size_t p = 0; p < n; ++p) {
        if (out.label[p] != kUnvisited) continue;
        index.neighbours(p, nb);
        if (nb.size() < min_points) {
            out.label[p] = DbscanLabels::kNoise;
            continue;
        }
        out.label[p] = cluster;
        frontier.assign(nb.begin(), nb.end());
        while (!frontier.empty()) {
            const auto q = frontier.front();
            frontier.pop_front();
            if (out.label[q] == DbscanLabels::kNoise) out.label[q] = cluster;  // border point
            if (out.label[q] != kUnvisited) continue;
            out.label[q] = cluster;
            index.neighbours(q, nb2);
            if (nb2.size() >= min_points) frontier.insert(frontier.end(), nb2.begin(), nb2.end());
        }
        ++cluster;
    }
    out.cluster_count = static_cast<std::size_t>(cluster);
    return out;
}

// Clusters in seed order, followed by one noise entry when any point is noise.
inline std::vector<AttentionCluster> dbscan(std::vector<Pixel> points, double eps, std::size_t min_points) {
    const auto lab = dbscan_labels(std::move(points), eps, min_points);
    std::vector<AttentionCluster> clusters(lab.cluster_count);
    AttentionCluster noise{{}, true};
    for (std::size_t i = 0; i < lab.points.size(); ++i) {
        if (lab.label[i] == DbscanLabels::kNoise) {
            noise.points.push_back(lab.points[i]);
        } else {
            clusters[static_cast<std::size_t>(lab.label[i])].points.push_back(lab.points[i]);
        }
    }
    if (!noise.points.empty()) clusters.push_back(std::move(noise));
    return clusters;
}

struct CleanSegment {
    int word_index = 0;
    std::vector<Pixel> pixels;  // row-major, unique
};

inline std::vector<Pixel> mask_pixels(const BinaryAttentionMap& map) {
    std::vector<Pixel> pts;
    for (std::size_t y = 0; y < map.mask.height(); ++y) {
        for (std::size_t x = 0; x < map.mask.width(); ++x) {
            if (map.mask(x, y)) pts.push_back({static_cast<std::int32_t>(x), static_cast<std::int32_t>(y)});
        }
    }
    return pts;
}

// Drops noise and clusters smaller than min_cluster_size.
inline CleanSegment clean_segment(const BinaryAttentionMap& map, const DbscanParams& params) {
    CleanSegment seg{map.word_index, {}};
    for (auto& c : dbscan(mask_pixels(map), params.eps, params.min_points)) {
        if (c.is_noise || c.points.size() < params.min_cluster_size) continue;
        seg.pixels.insert(seg.pixels.end(), c.points.begin(), c.points.end());
    }
    std::sort(seg.pixels.begin(), seg.pixels.end());
    return seg;
}

}  // namespace semcom
