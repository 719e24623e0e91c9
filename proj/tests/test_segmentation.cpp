#include <set>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "semcom/segmentation.hpp"

using namespace semcom;

namespace {

std::vector<Pixel> block(int x0, int y0, int w, int h) {
    std::vector<Pixel> out;
    for (int y = y0; y < y0 + h; ++y) {
        for (int x = x0; x < x0 + w; ++x) out.push_back({x, y});
    }
    return out;
}

BinaryAttentionMap to_map(const std::vector<Pixel>& pts, std::size_t side) {
    BinaryAttentionMap m{0, Grid<std::uint8_t>(side, side, 0)};
    for (const auto& p : pts) m.mask(static_cast<std::size_t>(p.x), static_cast<std::size_t>(p.y)) = 1;
    return m;
}

}  // namespace

TEST(Dbscan, SparsePointsAreNoise) {
    const std::vector<Pixel> pts{{0, 0}, {5, 0}, {0, 5}, {9, 9}};
    const auto c = dbscan(pts, 2.0, 2);
    ASSERT_EQ(c.size(), 1u);
    EXPECT_TRUE(c[0].is_noise);
    EXPECT_EQ(c[0].points.size(), 4u);
}

TEST(Dbscan, MinPointsOneHasNoNoise) {
    const std::vector<Pixel> pts{{0, 0}, {5, 0}, {6, 0}, {9, 9}};
    const auto c = dbscan(pts, 2.0, 1);
    EXPECT_EQ(c.size(), 3u);
    for (const auto& k : c) EXPECT_FALSE(k.is_noise);
}

TEST(Dbscan, TwoBlocksTwoClusters) {
    auto pts = block(0, 0, 5, 5);
    const auto b = block(25, 0, 5, 5);
    pts.insert(pts.end(), b.begin(), b.end());
    const auto c = dbscan(pts, 2.0, 4);
    ASSERT_EQ(c.size(), 2u);
    EXPECT_EQ(c[0].points.size(), 25u);
    EXPECT_EQ(c[1].points.size(), 25u);
    EXPECT_FALSE(c[0].is_noise);
    EXPECT_FALSE(c[1].is_noise);
}

TEST(Dbscan, EmptyInputAndBadParameters) {
    EXPECT_TRUE(dbscan({}, 2.0, 3).empty());
    EXPECT_THROW(dbscan({{0, 0}}, 0.0, 3), ConfigError);
    EXPECT_THROW(dbscan({{0, 0}}, 1.0, 0), ConfigError);
}

TEST(Dbscan, PartitionDeterminismAndOracle) {
    Rng rng(21);
    for (int trial = 0; trial < 60; ++trial) {
        std::set<Pixel> uniq;
        const auto n = 1 + rng.below(200);
        for (std::uint64_t k = 0; k < n; ++k) {
            uniq.insert({static_cast<std::int32_t>(rng.below(30)), static_cast<std::int32_t>(rng.below(30))});
        }
        const std::vector<Pixel> pts(uniq.begin(), uniq.end());
        const double eps = 1.0 + 2.0 * rng.uniform();
        const auto minp = static_cast<std::size_t>(1 + rng.below(6));
        const auto lab = dbscan_labels(pts, eps, minp);
        EXPECT_EQ(lab.points, pts);
        EXPECT_EQ(lab.label, oracle::dbscan(pts, eps, minp));
        EXPECT_EQ(dbscan_labels(pts, eps, minp).label, lab.label);

        std::size_t total = 0;
        std::set<Pixel> seen;
        for (const auto& c : dbscan(pts, eps, minp)) {
            total += c.points.size();
            seen.insert(c.points.begin(), c.points.end());
        }
        EXPECT_EQ(total, pts.size());
        EXPECT_EQ(seen, uniq);
    }
}

TEST(CleanSegment, BelowMinimumSizeIsDropped) {
    auto pts = block(0, 0, 6, 5);
    pts.pop_back();  // 29 points
    const auto seg = clean_segment(to_map(pts, 16), {2.0, 5, 30});
    EXPECT_TRUE(seg.pixels.empty());
}

TEST(CleanSegment, SolidBlockSurvives) {
    const auto pts = block(2, 3, 10, 10);
    const auto seg = clean_segment(to_map(pts, 16), {2.0, 5, 30});
    EXPECT_EQ(seg.pixels, pts);
}

TEST(CleanSegment, IsolatedPixelsAreRemoved) {
    auto pts = block(0, 0, 8, 5);
    const std::vector<Pixel> speckles{{20, 20}, {25, 3}, {3, 25}, {28, 28}, {15, 12}};
    const auto all = [&] {
        auto v = pts;
        v.insert(v.end(), speckles.begin(), speckles.end());
        return v;
    }();
    const auto map = to_map(all, 32);
    const auto seg = clean_segment(map, {2.0, 5, 30});
    EXPECT_EQ(seg.pixels, pts);
    for (const auto& p : seg.pixels) EXPECT_TRUE(map.mask(static_cast<std::size_t>(p.x), static_cast<std::size_t>(p.y)));
}
